#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "ecl/common.hpp"
#include "ecl/rng.hpp"

namespace ecl {

// Reverse-mode autodiff over dense arrays. The tape evaluates eagerly: every
// op computes its value when recorded, and backward() replays the records in
// exact reverse order, accumulating into input gradients.
//
// Scalar type is a template parameter: the training path runs on float, the
// finite-difference oracle in the tests runs the identical rules on double.

enum class OpKind {
    leaf,
    add,
    subtract,
    multiply,
    scale,       // multiply by a compile-time-known scalar (internal helper)
    matmul,
    conv2d,      // stride 1, valid padding
    maxpool2d,   // kernel 2, stride 2
    relu,
    tanh_fn,
    sigmoid,
    concat,      // last axis
    reshape,
    sum,         // axis: -1 all, 0 down rows, 1 across last axis
    mean,
    square,
    abs_fn,
    log_fn,      // argument clamped at kLogClamp
    exp_fn,
    softmax,     // last axis
    log_softmax, // last axis
    gather,      // per-row index selection on [B,K]
    stop_gradient,
    lstm_cell,   // packed output [B,2H] = (h', c')
    slice_cols,  // internal helper: column range view of [B,K]
};

inline constexpr double kLogClamp = 1e-10;

struct PrimitiveAttrs {
    int axis = -1;
    double alpha = 1.0;
    Shape target_shape;
    std::vector<int> indices;
};

template <typename T>
class Tape;

template <typename T>
struct TensorT {
    Tape<T>* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Shape& shape() const;
    const std::vector<T>& values() const;
    const std::vector<T>& grad() const;
    int64_t size() const { return numel(shape()); }
    T scalar() const;
};

template <typename T>
class Tape {
public:
    struct Node {
        OpKind op = OpKind::leaf;
        Shape shape;
        std::vector<T> val;
        std::vector<T> grad;
        std::array<int, 6> in{-1, -1, -1, -1, -1, -1};
        int n_in = 0;
        bool needs_grad = false;
        int axis = -1;
        T alpha = T(1);
        int i0 = 0, i1 = 0;
        std::vector<int> idx;  // gather indices / maxpool argmax
        std::vector<T> aux;    // saved intermediates (lstm gates)
    };

    Tape() { nodes_.reserve(256); }

    int size() const { return static_cast<int>(nodes_.size()); }
    const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
    Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }

    // ---- leaves ----

    TensorT<T> leaf(Shape shape, std::vector<T> values) {
        return make_leaf(std::move(shape), std::move(values), true);
    }

    TensorT<T> constant(Shape shape, std::vector<T> values) {
        return make_leaf(std::move(shape), std::move(values), false);
    }

    TensorT<T> constant_full(Shape shape, T value) {
        std::vector<T> v(static_cast<size_t>(numel(shape)), value);
        return make_leaf(std::move(shape), std::move(v), false);
    }

    TensorT<T> constant_scalar(T value) { return constant({1}, {value}); }

    // ---- elementwise binary ----

    TensorT<T> add(TensorT<T> a, TensorT<T> b) { return binary(OpKind::add, a, b); }
    TensorT<T> subtract(TensorT<T> a, TensorT<T> b) { return binary(OpKind::subtract, a, b); }
    TensorT<T> multiply(TensorT<T> a, TensorT<T> b) { return binary(OpKind::multiply, a, b); }

    TensorT<T> scale(TensorT<T> a, double alpha) {
        Node n = unary_node(OpKind::scale, a);
        n.alpha = static_cast<T>(alpha);
        n.val.resize(node(a.id).val.size());
        for (size_t i = 0; i < n.val.size(); ++i) n.val[i] = node(a.id).val[i] * n.alpha;
        return push(std::move(n));
    }

    // ---- matmul / conv / pool ----

    TensorT<T> matmul(TensorT<T> a, TensorT<T> b) {
        const Shape& sa = node(a.id).shape;
        const Shape& sb = node(b.id).shape;
        if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
            fail("matmul: incompatible shapes ", shape_str(sa), " x ", shape_str(sb));
        const int m = sa[0], k = sa[1], n = sb[1];
        Node nd;
        nd.op = OpKind::matmul;
        nd.shape = {m, n};
        nd.val.assign(static_cast<size_t>(m) * n, T(0));
        set_inputs(nd, {a, b});
        const T* A = node(a.id).val.data();
        const T* B = node(b.id).val.data();
        T* C = nd.val.data();
        for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
                const T av = A[i * k + p];
                if (av == T(0)) continue;
                const T* Brow = B + static_cast<size_t>(p) * n;
                T* Crow = C + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j) Crow[j] += av * Brow[j];
            }
        return push(std::move(nd));
    }

    // input [H,W,C] or [N,H,W,C]; kernel [KH,KW,C,F]; stride 1, valid padding.
    TensorT<T> conv2d(TensorT<T> input, TensorT<T> kernel) {
        const Shape& si = node(input.id).shape;
        const Shape& sk = node(kernel.id).shape;
        if ((si.size() != 3 && si.size() != 4) || sk.size() != 4)
            fail("conv2d: want input rank 3 or 4 and kernel rank 4, got ",
                 shape_str(si), " and ", shape_str(sk));
        const bool batched = si.size() == 4;
        const int N = batched ? si[0] : 1;
        const int H = si[batched ? 1 : 0], W = si[batched ? 2 : 1], C = si[batched ? 3 : 2];
        const int KH = sk[0], KW = sk[1], KC = sk[2], F = sk[3];
        if (KC != C) fail("conv2d: channel mismatch ", shape_str(si), " vs kernel ", shape_str(sk));
        if (KH > H || KW > W) fail("conv2d: kernel ", shape_str(sk), " larger than input ", shape_str(si));
        const int OH = H - KH + 1, OW = W - KW + 1;
        Node nd;
        nd.op = OpKind::conv2d;
        nd.shape = batched ? Shape{N, OH, OW, F} : Shape{OH, OW, F};
        nd.val.assign(static_cast<size_t>(N) * OH * OW * F, T(0));
        set_inputs(nd, {input, kernel});
        const T* X = node(input.id).val.data();
        const T* K = node(kernel.id).val.data();
        T* Y = nd.val.data();
        for (int n = 0; n < N; ++n) {
            const T* Xn = X + static_cast<size_t>(n) * H * W * C;
            T* Yn = Y + static_cast<size_t>(n) * OH * OW * F;
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    T* out = Yn + (static_cast<size_t>(oy) * OW + ox) * F;
                    for (int ky = 0; ky < KH; ++ky)
                        for (int kx = 0; kx < KW; ++kx) {
                            const T* xp = Xn + (static_cast<size_t>(oy + ky) * W + (ox + kx)) * C;
                            const T* kp = K + (static_cast<size_t>(ky) * KW + kx) * C * F;
                            for (int c = 0; c < C; ++c) {
                                const T xv = xp[c];
                                const T* kc = kp + static_cast<size_t>(c) * F;
                                for (int f = 0; f < F; ++f) out[f] += xv * kc[f];
                            }
                        }
                }
        }
        return push(std::move(nd));
    }

    TensorT<T> maxpool2d(TensorT<T> input) {
        const Shape& si = node(input.id).shape;
        if (si.size() != 3 && si.size() != 4)
            fail("maxpool2d: want rank 3 or 4, got ", shape_str(si));
        const bool batched = si.size() == 4;
        const int N = batched ? si[0] : 1;
        const int H = si[batched ? 1 : 0], W = si[batched ? 2 : 1], C = si[batched ? 3 : 2];
        if (H % 2 != 0 || W % 2 != 0)
            fail("maxpool2d: spatial dims must be even, got ", shape_str(si));
        const int OH = H / 2, OW = W / 2;
        Node nd;
        nd.op = OpKind::maxpool2d;
        nd.shape = batched ? Shape{N, OH, OW, C} : Shape{OH, OW, C};
        nd.val.assign(static_cast<size_t>(N) * OH * OW * C, T(0));
        nd.idx.assign(nd.val.size(), 0);
        set_inputs(nd, {input});
        const T* X = node(input.id).val.data();
        for (int n = 0; n < N; ++n)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox)
                    for (int c = 0; c < C; ++c) {
                        int best = -1;
                        T bv = T(0);
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const int iy = oy * 2 + dy, ix = ox * 2 + dx;
                                const int flat =
                                    ((n * H + iy) * W + ix) * C + c;
                                // ties route to the first maximal element
                                if (best < 0 || X[flat] > bv) {
                                    best = flat;
                                    bv = X[flat];
                                }
                            }
                        const int of = ((n * OH + oy) * OW + ox) * C + c;
                        nd.val[static_cast<size_t>(of)] = bv;
                        nd.idx[static_cast<size_t>(of)] = best;
                    }
        return push(std::move(nd));
    }

    // ---- elementwise unary ----

    TensorT<T> relu(TensorT<T> a) {
        Node n = unary_node(OpKind::relu, a);
        map(a, n, [](T x) { return x > T(0) ? x : T(0); });
        return push(std::move(n));
    }
    TensorT<T> tanh(TensorT<T> a) {
        Node n = unary_node(OpKind::tanh_fn, a);
        map(a, n, [](T x) { return std::tanh(x); });
        return push(std::move(n));
    }
    TensorT<T> sigmoid(TensorT<T> a) {
        Node n = unary_node(OpKind::sigmoid, a);
        map(a, n, [](T x) { return T(1) / (T(1) + std::exp(-x)); });
        return push(std::move(n));
    }
    TensorT<T> square(TensorT<T> a) {
        Node n = unary_node(OpKind::square, a);
        map(a, n, [](T x) { return x * x; });
        return push(std::move(n));
    }
    TensorT<T> abs(TensorT<T> a) {
        Node n = unary_node(OpKind::abs_fn, a);
        map(a, n, [](T x) { return std::abs(x); });
        return push(std::move(n));
    }
    // log with the 1e-10 clamp, so deterministic policies do not produce -inf.
    TensorT<T> log(TensorT<T> a) {
        Node n = unary_node(OpKind::log_fn, a);
        map(a, n, [](T x) { return std::log(std::max(x, static_cast<T>(kLogClamp))); });
        return push(std::move(n));
    }
    TensorT<T> exp(TensorT<T> a) {
        Node n = unary_node(OpKind::exp_fn, a);
        map(a, n, [](T x) { return std::exp(x); });
        return push(std::move(n));
    }

    TensorT<T> stop_gradient(TensorT<T> a) {
        Node n;
        n.op = OpKind::stop_gradient;
        n.shape = node(a.id).shape;
        n.val = node(a.id).val;  // bit-equal copy
        n.in[0] = a.id;
        n.n_in = 1;
        n.needs_grad = false;  // always-zero backward rule
        return push(std::move(n));
    }

    // ---- shape ops ----

    TensorT<T> reshape(TensorT<T> a, Shape target) {
        if (numel(target) != numel(node(a.id).shape))
            fail("reshape: cannot view ", shape_str(node(a.id).shape), " as ", shape_str(target));
        Node n = unary_node(OpKind::reshape, a);
        n.shape = std::move(target);
        n.val = node(a.id).val;
        return push(std::move(n));
    }

    TensorT<T> concat(TensorT<T> a, TensorT<T> b) {
        const Shape& sa = node(a.id).shape;
        const Shape& sb = node(b.id).shape;
        Node n;
        n.op = OpKind::concat;
        set_inputs(n, {a, b});
        if (sa.size() == 1 && sb.size() == 1) {
            n.shape = {sa[0] + sb[0]};
            n.val = node(a.id).val;
            n.val.insert(n.val.end(), node(b.id).val.begin(), node(b.id).val.end());
        } else if (sa.size() == 2 && sb.size() == 2 && sa[0] == sb[0]) {
            const int B = sa[0], ka = sa[1], kb = sb[1];
            n.shape = {B, ka + kb};
            n.val.resize(static_cast<size_t>(B) * (ka + kb));
            const auto& va = node(a.id).val;
            const auto& vb = node(b.id).val;
            for (int r = 0; r < B; ++r) {
                std::copy_n(va.begin() + static_cast<size_t>(r) * ka, ka,
                            n.val.begin() + static_cast<size_t>(r) * (ka + kb));
                std::copy_n(vb.begin() + static_cast<size_t>(r) * kb, kb,
                            n.val.begin() + static_cast<size_t>(r) * (ka + kb) + ka);
            }
        } else {
            fail("concat: incompatible shapes ", shape_str(sa), " and ", shape_str(sb));
        }
        n.i0 = sa.empty() ? 0 : sa.back();
        return push(std::move(n));
    }

    // ---- reductions (64-bit accumulation) ----

    TensorT<T> sum(TensorT<T> a, int axis = -1) { return reduce(OpKind::sum, a, axis); }
    TensorT<T> mean(TensorT<T> a, int axis = -1) { return reduce(OpKind::mean, a, axis); }

    // ---- softmax family (last axis) ----

    TensorT<T> softmax(TensorT<T> a) { return softmax_like(a, false); }
    TensorT<T> log_softmax(TensorT<T> a) { return softmax_like(a, true); }

    // ---- gather: out[b] = a[b, indices[b]] ----

    TensorT<T> gather(TensorT<T> a, const std::vector<int>& indices) {
        const Shape& sa = node(a.id).shape;
        if (sa.size() != 2) fail("gather: want rank 2 input, got ", shape_str(sa));
        const int B = sa[0], K = sa[1];
        if (static_cast<int>(indices.size()) != B)
            fail("gather: ", indices.size(), " indices for ", B, " rows");
        Node n = unary_node(OpKind::gather, a);
        n.shape = {B};
        n.val.resize(static_cast<size_t>(B));
        n.idx = indices;
        for (int b = 0; b < B; ++b) {
            const int k = indices[static_cast<size_t>(b)];
            if (k < 0 || k >= K) fail("gather: index ", k, " out of range [0,", K, ")");
            n.val[static_cast<size_t>(b)] = node(a.id).val[static_cast<size_t>(b) * K + k];
        }
        return push(std::move(n));
    }

    // ---- lstm cell ----
    // x [B,I], h [B,H], c [B,H], wx [I,4H], wh [H,4H], bias [4H].
    // Gate layout along the 4H axis: input, forget, candidate, output.
    struct LstmOut {
        TensorT<T> h;
        TensorT<T> c;
        TensorT<T> packed;
    };

    LstmOut lstm_cell(TensorT<T> x, TensorT<T> h, TensorT<T> c, TensorT<T> wx,
                      TensorT<T> wh, TensorT<T> bias) {
        TensorT<T> packed = lstm_cell_packed(x, h, c, wx, wh, bias);
        const int H = node(c.id).shape[1];
        return {slice_cols(packed, 0, H), slice_cols(packed, H, 2 * H), packed};
    }

    TensorT<T> lstm_cell_packed(TensorT<T> x, TensorT<T> h, TensorT<T> c, TensorT<T> wx,
                                TensorT<T> wh, TensorT<T> bias) {
        const Shape& sx = node(x.id).shape;
        const Shape& sh = node(h.id).shape;
        const Shape& sc = node(c.id).shape;
        const Shape& swx = node(wx.id).shape;
        const Shape& swh = node(wh.id).shape;
        const Shape& sb = node(bias.id).shape;
        if (sx.size() != 2 || sh.size() != 2 || sc.size() != 2 || swx.size() != 2 ||
            swh.size() != 2 || sb.size() != 1)
            fail("lstm-cell: bad ranks");
        const int B = sx[0], I = sx[1], H = sh[1];
        if (sh[0] != B || sc[0] != B || sc[1] != H || swx[0] != I || swx[1] != 4 * H ||
            swh[0] != H || swh[1] != 4 * H || sb[0] != 4 * H)
            fail("lstm-cell: shape mismatch x", shape_str(sx), " h", shape_str(sh), " c",
                 shape_str(sc), " wx", shape_str(swx), " wh", shape_str(swh), " b",
                 shape_str(sb));

        Node n;
        n.op = OpKind::lstm_cell;
        n.shape = {B, 2 * H};
        n.val.assign(static_cast<size_t>(B) * 2 * H, T(0));
        n.aux.assign(static_cast<size_t>(B) * 5 * H, T(0));  // i,f,g,o,tanh(c')
        set_inputs(n, {x, h, c, wx, wh, bias});
        n.i0 = H;

        const T* X = node(x.id).val.data();
        const T* Hp = node(h.id).val.data();
        const T* Cp = node(c.id).val.data();
        const T* Wx = node(wx.id).val.data();
        const T* Wh = node(wh.id).val.data();
        const T* Bv = node(bias.id).val.data();

        std::vector<T> pre(static_cast<size_t>(B) * 4 * H);
        for (int b = 0; b < B; ++b) {
            T* p = pre.data() + static_cast<size_t>(b) * 4 * H;
            std::copy_n(Bv, 4 * H, p);
            const T* xr = X + static_cast<size_t>(b) * I;
            for (int i = 0; i < I; ++i) {
                const T xv = xr[i];
                if (xv == T(0)) continue;
                const T* w = Wx + static_cast<size_t>(i) * 4 * H;
                for (int j = 0; j < 4 * H; ++j) p[j] += xv * w[j];
            }
            const T* hr = Hp + static_cast<size_t>(b) * H;
            for (int i = 0; i < H; ++i) {
                const T hv = hr[i];
                if (hv == T(0)) continue;
                const T* w = Wh + static_cast<size_t>(i) * 4 * H;
                for (int j = 0; j < 4 * H; ++j) p[j] += hv * w[j];
            }
            T* gi = n.aux.data() + static_cast<size_t>(b) * 5 * H;
            T* gf = gi + H;
            T* gg = gf + H;
            T* go = gg + H;
            T* tc = go + H;
            T* oh = n.val.data() + static_cast<size_t>(b) * 2 * H;
            T* oc = oh + H;
            for (int j = 0; j < H; ++j) {
                const T iv = T(1) / (T(1) + std::exp(-p[j]));
                const T fv = T(1) / (T(1) + std::exp(-p[H + j]));
                const T gv = std::tanh(p[2 * H + j]);
                const T ov = T(1) / (T(1) + std::exp(-p[3 * H + j]));
                const T cv = fv * Cp[static_cast<size_t>(b) * H + j] + iv * gv;
                const T tv = std::tanh(cv);
                gi[j] = iv;
                gf[j] = fv;
                gg[j] = gv;
                go[j] = ov;
                tc[j] = tv;
                oc[j] = cv;
                oh[j] = ov * tv;
            }
        }
        return push(std::move(n));
    }

    TensorT<T> slice_cols(TensorT<T> a, int c0, int c1) {
        const Shape& sa = node(a.id).shape;
        if (sa.size() != 2 || c0 < 0 || c1 > sa[1] || c0 >= c1)
            fail("slice_cols: bad range [", c0, ",", c1, ") for ", shape_str(sa));
        Node n = unary_node(OpKind::slice_cols, a);
        const int B = sa[0], K = sa[1], W = c1 - c0;
        n.shape = {B, W};
        n.val.resize(static_cast<size_t>(B) * W);
        n.i0 = c0;
        n.i1 = c1;
        for (int b = 0; b < B; ++b)
            std::copy_n(node(a.id).val.begin() + static_cast<size_t>(b) * K + c0, W,
                        n.val.begin() + static_cast<size_t>(b) * W);
        return push(std::move(n));
    }

    // The spec-facing generic entry point over the closed op-kind set.
    TensorT<T> apply_primitive(const std::string& kind, const std::vector<TensorT<T>>& in,
                               const PrimitiveAttrs& attrs = {}) {
        auto want = [&](size_t n) {
            if (in.size() != n)
                fail(kind, ": expected ", n, " inputs, got ", in.size());
        };
        if (kind == "add") { want(2); return add(in[0], in[1]); }
        if (kind == "subtract") { want(2); return subtract(in[0], in[1]); }
        if (kind == "multiply") {
            if (in.size() == 1) return scale(in[0], attrs.alpha);
            want(2);
            return multiply(in[0], in[1]);
        }
        if (kind == "matmul") { want(2); return matmul(in[0], in[1]); }
        if (kind == "conv2d") { want(2); return conv2d(in[0], in[1]); }
        if (kind == "maxpool2d") { want(1); return maxpool2d(in[0]); }
        if (kind == "relu") { want(1); return relu(in[0]); }
        if (kind == "tanh") { want(1); return tanh(in[0]); }
        if (kind == "sigmoid") { want(1); return sigmoid(in[0]); }
        if (kind == "concat") { want(2); return concat(in[0], in[1]); }
        if (kind == "reshape") { want(1); return reshape(in[0], attrs.target_shape); }
        if (kind == "sum") { want(1); return sum(in[0], attrs.axis); }
        if (kind == "mean") { want(1); return mean(in[0], attrs.axis); }
        if (kind == "square") { want(1); return square(in[0]); }
        if (kind == "abs") { want(1); return abs(in[0]); }
        if (kind == "log") { want(1); return log(in[0]); }
        if (kind == "exp") { want(1); return exp(in[0]); }
        if (kind == "softmax") { want(1); return softmax(in[0]); }
        if (kind == "log-softmax") { want(1); return log_softmax(in[0]); }
        if (kind == "gather") { want(1); return gather(in[0], attrs.indices); }
        if (kind == "stop-gradient") { want(1); return stop_gradient(in[0]); }
        if (kind == "lstm-cell") {
            want(6);
            return lstm_cell_packed(in[0], in[1], in[2], in[3], in[4], in[5]);
        }
        fail("apply_primitive: unknown op-kind '", kind, "'");
    }

    // ---- backward ----

    void backward(TensorT<T> loss) {
        if (loss.tape != this) fail("backward: loss is not on this tape");
        if (numel(node(loss.id).shape) != 1)
            fail("backward: loss must be scalar, got ", shape_str(node(loss.id).shape));
        for (auto& n : nodes_)
            if (!n.grad.empty()) std::fill(n.grad.begin(), n.grad.end(), T(0));
        grad_buf(loss.id)[0] = T(1);
        for (int id = loss.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (!n.needs_grad || n.grad.empty() || n.op == OpKind::leaf) continue;
            backward_node(n);
        }
    }

    const std::vector<T>& grad(TensorT<T> t) {
        Node& n = node(t.id);
        if (n.grad.empty()) n.grad.assign(n.val.size(), T(0));
        return n.grad;
    }

private:
    std::vector<Node> nodes_;

    TensorT<T> make_leaf(Shape shape, std::vector<T> values, bool needs_grad) {
        if (static_cast<int64_t>(values.size()) != numel(shape))
            fail("leaf: ", values.size(), " values for shape ", shape_str(shape));
        Node n;
        n.op = OpKind::leaf;
        n.shape = std::move(shape);
        n.val = std::move(values);
        n.needs_grad = needs_grad;
        return push(std::move(n));
    }

    TensorT<T> push(Node n) {
        if (n.op != OpKind::leaf && n.op != OpKind::stop_gradient) {
            bool g = false;
            for (int i = 0; i < n.n_in; ++i) g = g || nodes_[static_cast<size_t>(n.in[i])].needs_grad;
            n.needs_grad = g;
        }
        nodes_.push_back(std::move(n));
        return {this, static_cast<int>(nodes_.size()) - 1};
    }

    void set_inputs(Node& n, std::initializer_list<TensorT<T>> ins) {
        n.n_in = 0;
        for (auto t : ins) {
            if (t.tape != this) fail("op input from a different tape");
            n.in[static_cast<size_t>(n.n_in++)] = t.id;
        }
    }

    Node unary_node(OpKind op, TensorT<T> a) {
        Node n;
        n.op = op;
        n.shape = node(a.id).shape;
        set_inputs(n, {a});
        return n;
    }

    template <typename F>
    void map(TensorT<T> a, Node& out, F&& f) {
        const auto& v = node(a.id).val;
        out.val.resize(v.size());
        for (size_t i = 0; i < v.size(); ++i) out.val[i] = f(v[i]);
    }

    TensorT<T> binary(OpKind op, TensorT<T> a, TensorT<T> b) {
        const Shape& sa = node(a.id).shape;
        const Shape& sb = node(b.id).shape;
        const char* name = op == OpKind::add ? "add" : op == OpKind::subtract ? "subtract" : "multiply";
        Node n;
        n.op = op;
        n.shape = sa;
        set_inputs(n, {a, b});
        const auto& va = node(a.id).val;
        const auto& vb = node(b.id).val;
        if (sa == sb) {
            n.axis = 0;  // same-shape mode
            n.val.resize(va.size());
            for (size_t i = 0; i < va.size(); ++i) {
                n.val[i] = op == OpKind::add        ? va[i] + vb[i]
                           : op == OpKind::subtract ? va[i] - vb[i]
                                                    : va[i] * vb[i];
            }
        } else if (sb.size() == 1 && !sa.empty() && sa.back() == sb[0]) {
            // [..., K] (op) [K] broadcast across leading dims
            n.axis = 1;
            const int K = sb[0];
            const int64_t rows = numel(sa) / K;
            n.val.resize(va.size());
            for (int64_t r = 0; r < rows; ++r)
                for (int k = 0; k < K; ++k) {
                    const size_t i = static_cast<size_t>(r) * K + static_cast<size_t>(k);
                    n.val[i] = op == OpKind::add        ? va[i] + vb[static_cast<size_t>(k)]
                               : op == OpKind::subtract ? va[i] - vb[static_cast<size_t>(k)]
                                                        : va[i] * vb[static_cast<size_t>(k)];
                }
        } else {
            fail(name, ": shape mismatch ", shape_str(sa), " vs ", shape_str(sb));
        }
        return push(std::move(n));
    }

    TensorT<T> reduce(OpKind op, TensorT<T> a, int axis) {
        const Shape& sa = node(a.id).shape;
        Node n;
        n.op = op;
        n.axis = axis;
        set_inputs(n, {a});
        const auto& v = node(a.id).val;
        const char* name = op == OpKind::sum ? "sum" : "mean";
        if (axis == -1) {
            n.shape = {1};
            double acc = 0.0;
            for (T x : v) acc += static_cast<double>(x);
            if (op == OpKind::mean) acc /= static_cast<double>(v.size());
            n.val = {static_cast<T>(acc)};
        } else if (axis == 1 || axis == static_cast<int>(sa.size()) - 1) {
            if (sa.size() != 2) fail(name, ": last-axis reduce wants rank 2, got ", shape_str(sa));
            const int B = sa[0], K = sa[1];
            n.axis = 1;
            n.shape = {B};
            n.val.resize(static_cast<size_t>(B));
            for (int b = 0; b < B; ++b) {
                double acc = 0.0;
                for (int k = 0; k < K; ++k) acc += static_cast<double>(v[static_cast<size_t>(b) * K + k]);
                if (op == OpKind::mean) acc /= K;
                n.val[static_cast<size_t>(b)] = static_cast<T>(acc);
            }
        } else if (axis == 0) {
            if (sa.size() != 2) fail(name, ": axis-0 reduce wants rank 2, got ", shape_str(sa));
            const int B = sa[0], K = sa[1];
            n.shape = {K};
            n.val.assign(static_cast<size_t>(K), T(0));
            std::vector<double> acc(static_cast<size_t>(K), 0.0);
            for (int b = 0; b < B; ++b)
                for (int k = 0; k < K; ++k)
                    acc[static_cast<size_t>(k)] += static_cast<double>(v[static_cast<size_t>(b) * K + k]);
            for (int k = 0; k < K; ++k) {
                double x = acc[static_cast<size_t>(k)];
                if (op == OpKind::mean) x /= B;
                n.val[static_cast<size_t>(k)] = static_cast<T>(x);
            }
        } else {
            fail(name, ": unsupported axis ", axis, " for ", shape_str(sa));
        }
        return push(std::move(n));
    }

    TensorT<T> softmax_like(TensorT<T> a, bool log_form) {
        const Shape& sa = node(a.id).shape;
        if (sa.size() != 1 && sa.size() != 2)
            fail(log_form ? "log-softmax" : "softmax", ": want rank 1 or 2, got ", shape_str(sa));
        const int B = sa.size() == 2 ? sa[0] : 1;
        const int K = sa.back();
        Node n = unary_node(log_form ? OpKind::log_softmax : OpKind::softmax, a);
        n.val.resize(node(a.id).val.size());
        const T* x = node(a.id).val.data();
        T* y = n.val.data();
        for (int b = 0; b < B; ++b) {
            const T* xr = x + static_cast<size_t>(b) * K;
            T* yr = y + static_cast<size_t>(b) * K;
            T mx = xr[0];
            for (int k = 1; k < K; ++k) mx = std::max(mx, xr[k]);
            double z = 0.0;
            for (int k = 0; k < K; ++k) z += std::exp(static_cast<double>(xr[k] - mx));
            if (log_form) {
                const T lz = static_cast<T>(std::log(z));
                for (int k = 0; k < K; ++k) yr[k] = xr[k] - mx - lz;
            } else {
                for (int k = 0; k < K; ++k)
                    yr[k] = static_cast<T>(std::exp(static_cast<double>(xr[k] - mx)) / z);
            }
        }
        return push(std::move(n));
    }

    std::vector<T>& grad_buf(int id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.empty()) n.grad.assign(n.val.size(), T(0));
        return n.grad;
    }

    void add_into(int id, size_t offset, const T* g, size_t count) {
        if (!nodes_[static_cast<size_t>(id)].needs_grad) return;
        auto& buf = grad_buf(id);
        for (size_t i = 0; i < count; ++i) buf[offset + i] += g[i];
    }

    void backward_node(Node& n) {
        const std::vector<T>& gy = n.grad;
        switch (n.op) {
            case OpKind::add:
            case OpKind::subtract:
            case OpKind::multiply: {
                Node& a = nodes_[static_cast<size_t>(n.in[0])];
                Node& b = nodes_[static_cast<size_t>(n.in[1])];
                const bool bcast = n.axis == 1;
                if (a.needs_grad) {
                    auto& ga = grad_buf(n.in[0]);
                    if (n.op == OpKind::multiply) {
                        if (!bcast)
                            for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * b.val[i];
                        else {
                            const int K = b.shape[0];
                            for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * b.val[i % static_cast<size_t>(K)];
                        }
                    } else {
                        for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
                    }
                }
                if (b.needs_grad) {
                    auto& gb = grad_buf(n.in[1]);
                    const T sgn = n.op == OpKind::subtract ? T(-1) : T(1);
                    if (n.op == OpKind::multiply) {
                        if (!bcast)
                            for (size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * a.val[i];
                        else {
                            const int K = b.shape[0];
                            for (size_t i = 0; i < gy.size(); ++i)
                                gb[i % static_cast<size_t>(K)] += gy[i] * a.val[i];
                        }
                    } else if (!bcast) {
                        for (size_t i = 0; i < gy.size(); ++i) gb[i] += sgn * gy[i];
                    } else {
                        const int K = b.shape[0];
                        for (size_t i = 0; i < gy.size(); ++i) gb[i % static_cast<size_t>(K)] += sgn * gy[i];
                    }
                }
                break;
            }
            case OpKind::scale: {
                if (nodes_[static_cast<size_t>(n.in[0])].needs_grad) {
                    auto& ga = grad_buf(n.in[0]);
                    for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * n.alpha;
                }
                break;
            }
            case OpKind::matmul: {
                Node& a = nodes_[static_cast<size_t>(n.in[0])];
                Node& b = nodes_[static_cast<size_t>(n.in[1])];
                const int m = a.shape[0], k = a.shape[1], c = b.shape[1];
                if (a.needs_grad) {
                    auto& ga = grad_buf(n.in[0]);
                    // dA = dC * B^T
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < c; ++j) {
                            const T g = gy[static_cast<size_t>(i) * c + j];
                            if (g == T(0)) continue;
                            const T* brow = b.val.data() + static_cast<size_t>(0) * c + j;
                            T* garow = ga.data() + static_cast<size_t>(i) * k;
                            for (int p = 0; p < k; ++p) garow[p] += g * brow[static_cast<size_t>(p) * c];
                        }
                }
                if (b.needs_grad) {
                    auto& gb = grad_buf(n.in[1]);
                    // dB = A^T * dC
                    for (int i = 0; i < m; ++i) {
                        const T* arow = a.val.data() + static_cast<size_t>(i) * k;
                        const T* grow = gy.data() + static_cast<size_t>(i) * c;
                        for (int p = 0; p < k; ++p) {
                            const T av = arow[p];
                            if (av == T(0)) continue;
                            T* gbrow = gb.data() + static_cast<size_t>(p) * c;
                            for (int j = 0; j < c; ++j) gbrow[j] += av * grow[j];
                        }
                    }
                }
                break;
            }
            case OpKind::conv2d: {
                Node& x = nodes_[static_cast<size_t>(n.in[0])];
                Node& k = nodes_[static_cast<size_t>(n.in[1])];
                const bool batched = x.shape.size() == 4;
                const int N = batched ? x.shape[0] : 1;
                const int H = x.shape[batched ? 1 : 0], W = x.shape[batched ? 2 : 1],
                          C = x.shape[batched ? 3 : 2];
                const int KH = k.shape[0], KW = k.shape[1], F = k.shape[3];
                const int OH = H - KH + 1, OW = W - KW + 1;
                const bool gx = x.needs_grad, gk = k.needs_grad;
                if (!gx && !gk) break;
                if (gx) grad_buf(n.in[0]);
                if (gk) grad_buf(n.in[1]);
                for (int nn = 0; nn < N; ++nn)
                    for (int oy = 0; oy < OH; ++oy)
                        for (int ox = 0; ox < OW; ++ox) {
                            const T* gout =
                                gy.data() + ((static_cast<size_t>(nn) * OH + oy) * OW + ox) * F;
                            for (int ky = 0; ky < KH; ++ky)
                                for (int kx = 0; kx < KW; ++kx) {
                                    const size_t xoff =
                                        ((static_cast<size_t>(nn) * H + (oy + ky)) * W + (ox + kx)) * C;
                                    const size_t koff = (static_cast<size_t>(ky) * KW + kx) * C * F;
                                    for (int c = 0; c < C; ++c) {
                                        if (gx) {
                                            T acc = T(0);
                                            const T* kc = k.val.data() + koff + static_cast<size_t>(c) * F;
                                            for (int f = 0; f < F; ++f) acc += kc[f] * gout[f];
                                            x.grad[xoff + static_cast<size_t>(c)] += acc;
                                        }
                                        if (gk) {
                                            const T xv = x.val[xoff + static_cast<size_t>(c)];
                                            T* kg = k.grad.data() + koff + static_cast<size_t>(c) * F;
                                            for (int f = 0; f < F; ++f) kg[f] += xv * gout[f];
                                        }
                                    }
                                }
                        }
                break;
            }
            case OpKind::maxpool2d: {
                if (!nodes_[static_cast<size_t>(n.in[0])].needs_grad) break;
                auto& gx = grad_buf(n.in[0]);
                for (size_t i = 0; i < gy.size(); ++i)
                    gx[static_cast<size_t>(n.idx[i])] += gy[i];
                break;
            }
            case OpKind::relu: {
                if (!nodes_[static_cast<size_t>(n.in[0])].needs_grad) break;
                auto& gx = grad_buf(n.in[0]);
                const auto& x = nodes_[static_cast<size_t>(n.in[0])].val;
                for (size_t i = 0; i < gy.size(); ++i)
                    if (x[i] > T(0)) gx[i] += gy[i];
                break;
            }
            case OpKind::tanh_fn: {
                if (!nodes_[static_cast<size_t>(n.in[0])].needs_grad) break;
                auto& gx = grad_buf(n.in[0]);
                for (size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * (T(1) - n.val[i] * n.val[i]);
                break;
            }
            case OpKind::sigmoid: {
                if (!nodes_[static_cast<size_t>(n.in[0])].needs_grad) break;
                auto& gx = grad_buf(n.in[0]);
                for (size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * n.val[i] * (T(1) - n.val[i]);
                break;
            }
            case OpKind::square: {
                if (!nodes_[static_cast<size_t>(n.in[0])].needs_grad) break;
                auto& gx = grad_buf(n.in[0]);
                const auto& x = nodes_[static_cast<size_t>(n.in[0])].val;
                for (size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * T(2) * x[i];
                break;
            }
            case OpKind::abs_fn: {
                if (!nodes_[static_cast<size_t>(n.in[0])].needs_grad) break;
                auto& gx = grad_buf(n.in[0]);
                const auto& x = nodes_[static_cast<size_t>(n.in[0])].val;
                for (size_t i = 0; i < gy.size(); ++i) {
                    if (x[i] > T(0)) gx[i] += gy[i];
                    else if (x[i] < T(0)) gx[i] -= gy[i];
                }
                break;
            }
            case OpKind::log_fn: {
                if (!nodes_[static_cast<size_t>(n.in[0])].needs_grad) break;
                auto& gx = grad_buf(n.in[0]);
                const auto& x = nodes_[static_cast<size_t>(n.in[0])].val;
                for (size_t i = 0; i < gy.size(); ++i)
                    gx[i] += gy[i] / std::max(x[i], static_cast<T>(kLogClamp));
                break;
            }
            case OpKind::exp_fn: {
                if (!nodes_[static_cast<size_t>(n.in[0])].needs_grad) break;
                auto& gx = grad_buf(n.in[0]);
                for (size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * n.val[i];
                break;
            }
            case OpKind::reshape: {
                add_into(n.in[0], 0, gy.data(), gy.size());
                break;
            }
            case OpKind::concat: {
                Node& a = nodes_[static_cast<size_t>(n.in[0])];
                Node& b = nodes_[static_cast<size_t>(n.in[1])];
                if (n.shape.size() == 1) {
                    add_into(n.in[0], 0, gy.data(), a.val.size());
                    add_into(n.in[1], 0, gy.data() + a.val.size(), b.val.size());
                } else {
                    const int B = n.shape[0], ka = a.shape[1], kb = b.shape[1];
                    if (a.needs_grad) {
                        auto& ga = grad_buf(n.in[0]);
                        for (int r = 0; r < B; ++r)
                            for (int j = 0; j < ka; ++j)
                                ga[static_cast<size_t>(r) * ka + j] +=
                                    gy[static_cast<size_t>(r) * (ka + kb) + j];
                    }
                    if (b.needs_grad) {
                        auto& gb = grad_buf(n.in[1]);
                        for (int r = 0; r < B; ++r)
                            for (int j = 0; j < kb; ++j)
                                gb[static_cast<size_t>(r) * kb + j] +=
                                    gy[static_cast<size_t>(r) * (ka + kb) + ka + j];
                    }
                }
                break;
            }
            case OpKind::sum:
            case OpKind::mean: {
                Node& a = nodes_[static_cast<size_t>(n.in[0])];
                if (!a.needs_grad) break;
                auto& ga = grad_buf(n.in[0]);
                if (n.axis == -1) {
                    const T g = n.op == OpKind::mean
                                    ? gy[0] / static_cast<T>(a.val.size())
                                    : gy[0];
                    for (auto& v : ga) v += g;
                } else if (n.axis == 1) {
                    const int B = a.shape[0], K = a.shape[1];
                    for (int b = 0; b < B; ++b) {
                        const T g = n.op == OpKind::mean ? gy[static_cast<size_t>(b)] / static_cast<T>(K)
                                                         : gy[static_cast<size_t>(b)];
                        for (int k = 0; k < K; ++k) ga[static_cast<size_t>(b) * K + k] += g;
                    }
                } else {  // axis 0
                    const int B = a.shape[0], K = a.shape[1];
                    for (int b = 0; b < B; ++b)
                        for (int k = 0; k < K; ++k) {
                            const T g = n.op == OpKind::mean ? gy[static_cast<size_t>(k)] / static_cast<T>(B)
                                                             : gy[static_cast<size_t>(k)];
                            ga[static_cast<size_t>(b) * K + k] += g;
                        }
                }
                break;
            }
            case OpKind::softmax: {
                if (!nodes_[static_cast<size_t>(n.in[0])].needs_grad) break;
                auto& gx = grad_buf(n.in[0]);
                const int K = n.shape.back();
                const int B = static_cast<int>(n.val.size()) / K;
                for (int b = 0; b < B; ++b) {
                    const T* p = n.val.data() + static_cast<size_t>(b) * K;
                    const T* g = gy.data() + static_cast<size_t>(b) * K;
                    double dot = 0.0;
                    for (int k = 0; k < K; ++k) dot += static_cast<double>(g[k]) * p[k];
                    for (int k = 0; k < K; ++k)
                        gx[static_cast<size_t>(b) * K + k] +=
                            p[k] * (g[k] - static_cast<T>(dot));
                }
                break;
            }
            case OpKind::log_softmax: {
                if (!nodes_[static_cast<size_t>(n.in[0])].needs_grad) break;
                auto& gx = grad_buf(n.in[0]);
                const int K = n.shape.back();
                const int B = static_cast<int>(n.val.size()) / K;
                for (int b = 0; b < B; ++b) {
                    const T* ls = n.val.data() + static_cast<size_t>(b) * K;
                    const T* g = gy.data() + static_cast<size_t>(b) * K;
                    double gsum = 0.0;
                    for (int k = 0; k < K; ++k) gsum += static_cast<double>(g[k]);
                    for (int k = 0; k < K; ++k)
                        gx[static_cast<size_t>(b) * K + k] +=
                            g[k] - static_cast<T>(std::exp(static_cast<double>(ls[k])) * gsum);
                }
                break;
            }
            case OpKind::gather: {
                if (!nodes_[static_cast<size_t>(n.in[0])].needs_grad) break;
                auto& gx = grad_buf(n.in[0]);
                const int K = nodes_[static_cast<size_t>(n.in[0])].shape[1];
                for (size_t b = 0; b < gy.size(); ++b)
                    gx[b * static_cast<size_t>(K) + static_cast<size_t>(n.idx[b])] += gy[b];
                break;
            }
            case OpKind::slice_cols: {
                if (!nodes_[static_cast<size_t>(n.in[0])].needs_grad) break;
                auto& gx = grad_buf(n.in[0]);
                const int K = nodes_[static_cast<size_t>(n.in[0])].shape[1];
                const int B = n.shape[0], W = n.shape[1];
                for (int b = 0; b < B; ++b)
                    for (int j = 0; j < W; ++j)
                        gx[static_cast<size_t>(b) * K + n.i0 + j] += gy[static_cast<size_t>(b) * W + j];
                break;
            }
            case OpKind::lstm_cell: {
                backward_lstm(n);
                break;
            }
            case OpKind::leaf:
            case OpKind::stop_gradient:
                break;
        }
    }

    void backward_lstm(Node& n) {
        Node& x = nodes_[static_cast<size_t>(n.in[0])];
        Node& h = nodes_[static_cast<size_t>(n.in[1])];
        Node& c = nodes_[static_cast<size_t>(n.in[2])];
        Node& wx = nodes_[static_cast<size_t>(n.in[3])];
        Node& wh = nodes_[static_cast<size_t>(n.in[4])];
        Node& bias = nodes_[static_cast<size_t>(n.in[5])];
        const int B = n.shape[0];
        const int H = n.i0;
        const int I = x.shape[1];

        std::vector<T> dpre(static_cast<size_t>(B) * 4 * H, T(0));
        for (int b = 0; b < B; ++b) {
            const T* gi = n.aux.data() + static_cast<size_t>(b) * 5 * H;
            const T* gf = gi + H;
            const T* gg = gf + H;
            const T* go = gg + H;
            const T* tc = go + H;
            const T* dh = n.grad.data() + static_cast<size_t>(b) * 2 * H;
            const T* dc_out = dh + H;
            const T* cin = c.val.data() + static_cast<size_t>(b) * H;
            T* dp = dpre.data() + static_cast<size_t>(b) * 4 * H;
            for (int j = 0; j < H; ++j) {
                const T dov = dh[j] * tc[j];
                const T dcv = dc_out[j] + dh[j] * go[j] * (T(1) - tc[j] * tc[j]);
                const T div = dcv * gg[j];
                const T dfv = dcv * cin[j];
                const T dgv = dcv * gi[j];
                dp[j] = div * gi[j] * (T(1) - gi[j]);
                dp[H + j] = dfv * gf[j] * (T(1) - gf[j]);
                dp[2 * H + j] = dgv * (T(1) - gg[j] * gg[j]);
                dp[3 * H + j] = dov * go[j] * (T(1) - go[j]);
                if (c.needs_grad) {
                    if (c.grad.empty()) grad_buf(n.in[2]);
                    c.grad[static_cast<size_t>(b) * H + j] += dcv * gf[j];
                }
            }
        }
        if (x.needs_grad) {
            auto& gx = grad_buf(n.in[0]);
            for (int b = 0; b < B; ++b) {
                const T* dp = dpre.data() + static_cast<size_t>(b) * 4 * H;
                T* gxr = gx.data() + static_cast<size_t>(b) * I;
                for (int i = 0; i < I; ++i) {
                    const T* w = wx.val.data() + static_cast<size_t>(i) * 4 * H;
                    T acc = T(0);
                    for (int j = 0; j < 4 * H; ++j) acc += w[j] * dp[j];
                    gxr[i] += acc;
                }
            }
        }
        if (h.needs_grad) {
            auto& gh = grad_buf(n.in[1]);
            for (int b = 0; b < B; ++b) {
                const T* dp = dpre.data() + static_cast<size_t>(b) * 4 * H;
                T* ghr = gh.data() + static_cast<size_t>(b) * H;
                for (int i = 0; i < H; ++i) {
                    const T* w = wh.val.data() + static_cast<size_t>(i) * 4 * H;
                    T acc = T(0);
                    for (int j = 0; j < 4 * H; ++j) acc += w[j] * dp[j];
                    ghr[i] += acc;
                }
            }
        }
        if (wx.needs_grad) {
            auto& g = grad_buf(n.in[3]);
            for (int b = 0; b < B; ++b) {
                const T* xr = x.val.data() + static_cast<size_t>(b) * I;
                const T* dp = dpre.data() + static_cast<size_t>(b) * 4 * H;
                for (int i = 0; i < I; ++i) {
                    const T xv = xr[i];
                    if (xv == T(0)) continue;
                    T* gr = g.data() + static_cast<size_t>(i) * 4 * H;
                    for (int j = 0; j < 4 * H; ++j) gr[j] += xv * dp[j];
                }
            }
        }
        if (wh.needs_grad) {
            auto& g = grad_buf(n.in[4]);
            for (int b = 0; b < B; ++b) {
                const T* hr = h.val.data() + static_cast<size_t>(b) * H;
                const T* dp = dpre.data() + static_cast<size_t>(b) * 4 * H;
                for (int i = 0; i < H; ++i) {
                    const T hv = hr[i];
                    if (hv == T(0)) continue;
                    T* gr = g.data() + static_cast<size_t>(i) * 4 * H;
                    for (int j = 0; j < 4 * H; ++j) gr[j] += hv * dp[j];
                }
            }
        }
        if (bias.needs_grad) {
            auto& g = grad_buf(n.in[5]);
            for (int b = 0; b < B; ++b) {
                const T* dp = dpre.data() + static_cast<size_t>(b) * 4 * H;
                for (int j = 0; j < 4 * H; ++j) g[static_cast<size_t>(j)] += dp[j];
            }
        }
    }
};

template <typename T>
const Shape& TensorT<T>::shape() const { return tape->node(id).shape; }
template <typename T>
const std::vector<T>& TensorT<T>::values() const { return tape->node(id).val; }
template <typename T>
const std::vector<T>& TensorT<T>::grad() const { return tape->node(id).grad; }
template <typename T>
T TensorT<T>::scalar() const {
    if (numel(shape()) != 1) fail("scalar(): tensor has shape ", shape_str(shape()));
    return values()[0];
}

using Tensor = TensorT<float>;
using TapeF = Tape<float>;
using TapeD = Tape<double>;

// ---- finite-difference gradient check ----

struct GradCheckReport {
    double max_rel_err = 0.0;
    double tol = 0.0;
    int coords_checked = 0;
    bool pass = false;
};

// f: (Tape<T>&, TensorT<T> input) -> scalar tensor. Central differences with
// step h against the tape gradient. When max_coords > 0, a deterministic
// subsample of coordinates is checked (needed for the big architectures).
template <typename T, typename F>
GradCheckReport check_gradient(F&& f, const Shape& shape, const std::vector<T>& x0,
                               double h, double tol, int max_coords = -1,
                               uint64_t subsample_seed = 0) {
    if (h <= 0) fail("check_gradient: h must be positive");
    auto eval = [&](const std::vector<T>& xv) {
        Tape<T> tape;
        TensorT<T> x = tape.leaf(shape, xv);
        TensorT<T> y = f(tape, x);
        const T v = y.scalar();
        if (!std::isfinite(static_cast<double>(v)))
            fail("check_gradient: non-finite function value");
        return v;
    };

    Tape<T> tape;
    TensorT<T> x = tape.leaf(shape, x0);
    TensorT<T> y = f(tape, x);
    if (!std::isfinite(static_cast<double>(y.scalar())))
        fail("check_gradient: non-finite function value");
    tape.backward(y);
    std::vector<T> analytic = tape.grad(x);

    std::vector<int> coords;
    const int n = static_cast<int>(x0.size());
    if (max_coords > 0 && max_coords < n) {
        Rng rng(subsample_seed);
        for (int i = 0; i < max_coords; ++i) coords.push_back(rng.uniform_int(n));
    } else {
        coords.resize(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    }

    GradCheckReport report;
    report.tol = tol;
    std::vector<T> xp = x0;
    for (int i : coords) {
        const T orig = xp[static_cast<size_t>(i)];
        xp[static_cast<size_t>(i)] = orig + static_cast<T>(h);
        const double fp = static_cast<double>(eval(xp));
        xp[static_cast<size_t>(i)] = orig - static_cast<T>(h);
        const double fm = static_cast<double>(eval(xp));
        xp[static_cast<size_t>(i)] = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double an = static_cast<double>(analytic[static_cast<size_t>(i)]);
        if (!std::isfinite(fd) || !std::isfinite(an))
            fail("check_gradient: non-finite gradient at coordinate ", i);
        const double denom = std::max({std::abs(fd), std::abs(an), 1e-3});
        report.max_rel_err = std::max(report.max_rel_err, std::abs(fd - an) / denom);
        ++report.coords_checked;
    }
    report.pass = report.max_rel_err < tol;
    return report;
}

}  // namespace ecl
