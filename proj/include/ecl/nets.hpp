#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "ecl/common.hpp"
#include "ecl/rng.hpp"
#include "ecl/tensor.hpp"

namespace ecl {

// ---- parameter store ----
// Parameters live outside any tape as float32 (that is what checkpoints
// serialize); each update binds them onto a fresh tape as leaves.

struct Param {
    std::string name;
    Shape shape;
    std::vector<float> value;
};

struct ParamSet {
    std::vector<Param> params;

    Param& add(const std::string& name, Shape shape) {
        params.push_back({name, shape, std::vector<float>(static_cast<size_t>(numel(shape)), 0.f)});
        return params.back();
    }
    int find(const std::string& name) const {
        for (size_t i = 0; i < params.size(); ++i)
            if (params[i].name == name) return static_cast<int>(i);
        return -1;
    }
    Param& at(const std::string& name) {
        int i = find(name);
        if (i < 0) fail("unknown parameter '", name, "'");
        return params[static_cast<size_t>(i)];
    }
    const Param& at(const std::string& name) const {
        int i = find(name);
        if (i < 0) fail("unknown parameter '", name, "'");
        return params[static_cast<size_t>(i)];
    }
    int64_t total_size() const {
        int64_t n = 0;
        for (const auto& p : params) n += numel(p.shape);
        return n;
    }
};

// Tape-bound view of a ParamSet; remembers tensor handles by name so the
// harness can read gradients back out in ParamSet order.
template <typename T>
struct BoundParams {
    std::unordered_map<std::string, TensorT<T>> tensors;

    TensorT<T> operator[](const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) fail("parameter '", name, "' not bound");
        return it->second;
    }
};

template <typename T>
BoundParams<T> bind_params(Tape<T>& tape, const ParamSet& ps, bool trainable = true) {
    BoundParams<T> bound;
    for (const auto& p : ps.params) {
        std::vector<T> v(p.value.begin(), p.value.end());
        bound.tensors.emplace(p.name, trainable ? tape.leaf(p.shape, std::move(v))
                                                : tape.constant(p.shape, std::move(v)));
    }
    return bound;
}

// Gradients in ParamSet order, zeros where a parameter was unused.
template <typename T>
std::vector<std::vector<float>> collect_grads(Tape<T>& tape, const ParamSet& ps,
                                              const BoundParams<T>& bound) {
    std::vector<std::vector<float>> out;
    out.reserve(ps.params.size());
    for (const auto& p : ps.params) {
        const auto& g = tape.grad(bound[p.name]);
        out.emplace_back(g.begin(), g.end());
    }
    return out;
}

// ---- initialization: uniform fan-in scaling, LSTM forget-gate bias +1 ----

inline void init_linear(Param& w, Param& b, int fan_in, Rng& rng) {
    const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& x : w.value) x = static_cast<float>(rng.uniform(-a, a));
    for (auto& x : b.value) x = 0.f;
}

// ---- digit-game agent ----

struct DigitNetConfig {
    bool listener = false;    // listener consumes a message and emits 19 actions
    bool symbolic = false;    // one-hot(10) into an MLP instead of the conv stack
    int mlp_hidden = 64;      // symbolic variant
    int message_alphabet = 20;
    int n_digits = 10;

    int head_width() const { return listener ? 2 * n_digits - 1 : message_alphabet; }
    int obs_width() const { return symbolic ? n_digits : 28 * 28; }
};

inline ParamSet make_digit_net(const DigitNetConfig& cfg, Rng& rng) {
    ParamSet ps;
    if (cfg.symbolic) {
        const int in = cfg.n_digits + (cfg.listener ? cfg.message_alphabet : 0);
        init_linear(ps.add("fc1/w", {in, cfg.mlp_hidden}), ps.add("fc1/b", {cfg.mlp_hidden}), in, rng);
        init_linear(ps.add("fc2/w", {cfg.mlp_hidden, cfg.mlp_hidden}), ps.add("fc2/b", {cfg.mlp_hidden}),
                    cfg.mlp_hidden, rng);
        init_linear(ps.add("head/w", {cfg.mlp_hidden, cfg.head_width()}), ps.add("head/b", {cfg.head_width()}),
                    cfg.mlp_hidden, rng);
    } else {
        init_linear(ps.add("conv1/w", {5, 5, 1, 32}), ps.add("conv1/b", {32}), 5 * 5 * 1, rng);
        init_linear(ps.add("conv2/w", {5, 5, 32, 64}), ps.add("conv2/b", {64}), 5 * 5 * 32, rng);
        const int flat = 4 * 4 * 64;
        const int in = flat + (cfg.listener ? cfg.message_alphabet : 0);
        init_linear(ps.add("fc1/w", {in, 1024}), ps.add("fc1/b", {1024}), in, rng);
        init_linear(ps.add("head/w", {1024, cfg.head_width()}), ps.add("head/b", {cfg.head_width()}),
                    1024, rng);
    }
    return ps;
}

// obs: [B,10] one-hots (symbolic) or [B,28,28,1] images in [0,1].
// message: one-hot [B,message_alphabet]; required iff listener.
// Returns policy logits [B, head_width].
template <typename T>
TensorT<T> digit_forward(Tape<T>& tape, const BoundParams<T>& p, const DigitNetConfig& cfg,
                         TensorT<T> obs, TensorT<T> message = {}) {
    if (cfg.listener != message.valid())
        fail("digit_forward: message must be given exactly for the listener variant");
    if (cfg.symbolic) {
        if (obs.shape().size() != 2 || obs.shape()[1] != cfg.n_digits)
            fail("digit_forward: want [B,", cfg.n_digits, "] one-hots, got ", shape_str(obs.shape()));
        TensorT<T> x = cfg.listener ? tape.concat(obs, message) : obs;
        auto h1 = tape.relu(tape.add(tape.matmul(x, p["fc1/w"]), p["fc1/b"]));
        auto h2 = tape.relu(tape.add(tape.matmul(h1, p["fc2/w"]), p["fc2/b"]));
        return tape.add(tape.matmul(h2, p["head/w"]), p["head/b"]);
    }
    if (obs.shape().size() != 4 || obs.shape()[1] != 28 || obs.shape()[2] != 28 || obs.shape()[3] != 1)
        fail("digit_forward: want [B,28,28,1] images, got ", shape_str(obs.shape()));
    const int b = obs.shape()[0];
    auto c1 = tape.relu(tape.add(tape.conv2d(obs, p["conv1/w"]), p["conv1/b"]));
    auto p1 = tape.maxpool2d(c1);
    auto c2 = tape.relu(tape.add(tape.conv2d(p1, p["conv2/w"]), p["conv2/b"]));
    auto p2 = tape.maxpool2d(c2);
    auto flat = tape.reshape(p2, {b, 4 * 4 * 64});
    TensorT<T> x = cfg.listener ? tape.concat(flat, message) : flat;
    auto h = tape.relu(tape.add(tape.matmul(x, p["fc1/w"]), p["fc1/b"]));
    return tape.add(tape.matmul(h, p["head/w"]), p["head/b"]);
}

// ---- treasure-hunt agent ----

struct TreasureNetConfig {
    int conv_channels = 6;
    int mlp_hidden = 64;
    int lstm_hidden = 128;
    int n_actions = 5;
    int n_messages = 5;
    static constexpr int kObsSide = 5;
    static constexpr int kObsChannels = 3;

    int obs_size() const { return kObsSide * kObsSide * kObsChannels; }
};

inline ParamSet make_treasure_net(const TreasureNetConfig& cfg, Rng& rng) {
    ParamSet ps;
    init_linear(ps.add("conv/w", {1, 1, cfg.kObsChannels, cfg.conv_channels}),
                ps.add("conv/b", {cfg.conv_channels}), cfg.kObsChannels, rng);
    const int flat = cfg.kObsSide * cfg.kObsSide * cfg.conv_channels;
    init_linear(ps.add("fc1/w", {flat, cfg.mlp_hidden}), ps.add("fc1/b", {cfg.mlp_hidden}), flat, rng);
    init_linear(ps.add("fc2/w", {cfg.mlp_hidden, cfg.mlp_hidden}), ps.add("fc2/b", {cfg.mlp_hidden}),
                cfg.mlp_hidden, rng);
    const int lstm_in = cfg.mlp_hidden + cfg.n_messages;
    init_linear(ps.add("lstm/wx", {lstm_in, 4 * cfg.lstm_hidden}), ps.add("lstm/b", {4 * cfg.lstm_hidden}),
                lstm_in, rng);
    {
        Param& wh = ps.add("lstm/wh", {cfg.lstm_hidden, 4 * cfg.lstm_hidden});
        const double a = 1.0 / std::sqrt(static_cast<double>(cfg.lstm_hidden));
        for (auto& x : wh.value) x = static_cast<float>(rng.uniform(-a, a));
    }
    // forget-gate bias +1
    {
        Param& b = ps.at("lstm/b");
        for (int j = 0; j < cfg.lstm_hidden; ++j)
            b.value[static_cast<size_t>(cfg.lstm_hidden + j)] = 1.f;
    }
    init_linear(ps.add("action/w", {cfg.lstm_hidden, cfg.n_actions}), ps.add("action/b", {cfg.n_actions}),
                cfg.lstm_hidden, rng);
    init_linear(ps.add("message/w", {cfg.lstm_hidden, cfg.n_messages}), ps.add("message/b", {cfg.n_messages}),
                cfg.lstm_hidden, rng);
    init_linear(ps.add("value/w", {cfg.lstm_hidden, 1}), ps.add("value/b", {1}), cfg.lstm_hidden, rng);
    return ps;
}

template <typename T>
struct TreasureStepOut {
    TensorT<T> action_logits;  // [B, n_actions]
    TensorT<T> message_logits; // [B, n_messages]
    TensorT<T> value;          // [B]
    TensorT<T> h;              // [B, lstm_hidden]
    TensorT<T> c;
};

// obs [B,5,5,3] in [0,1]; prev_message one-hot [B,n_messages] (all-zeros row =
// no incoming message, which doubles as the counterfactual input); state (h,c).
template <typename T>
TreasureStepOut<T> treasure_step(Tape<T>& tape, const BoundParams<T>& p,
                                 const TreasureNetConfig& cfg, TensorT<T> obs,
                                 TensorT<T> prev_message, TensorT<T> h, TensorT<T> c) {
    if (obs.shape().size() != 4 || obs.shape()[1] != cfg.kObsSide ||
        obs.shape()[2] != cfg.kObsSide || obs.shape()[3] != cfg.kObsChannels)
        fail("treasure_step: want [B,5,5,3] observations, got ", shape_str(obs.shape()));
    const int b = obs.shape()[0];
    auto cv = tape.relu(tape.add(tape.conv2d(obs, p["conv/w"]), p["conv/b"]));
    auto flat = tape.reshape(cv, {b, cfg.kObsSide * cfg.kObsSide * cfg.conv_channels});
    auto h1 = tape.relu(tape.add(tape.matmul(flat, p["fc1/w"]), p["fc1/b"]));
    auto h2 = tape.relu(tape.add(tape.matmul(h1, p["fc2/w"]), p["fc2/b"]));
    auto x = tape.concat(h2, prev_message);
    auto lstm = tape.lstm_cell(x, h, c, p["lstm/wx"], p["lstm/wh"], p["lstm/b"]);
    TreasureStepOut<T> out;
    out.action_logits = tape.add(tape.matmul(lstm.h, p["action/w"]), p["action/b"]);
    out.message_logits = tape.add(tape.matmul(lstm.h, p["message/w"]), p["message/b"]);
    out.value = tape.reshape(tape.add(tape.matmul(lstm.h, p["value/w"]), p["value/b"]), {b});
    out.h = lstm.h;
    out.c = lstm.c;

    auto check_finite = [&](const TensorT<T>& t, const char* layer) {
        for (T v : t.values())
            if (!std::isfinite(static_cast<double>(v)))
                fail("treasure_step: non-finite activation in ", layer);
    };
    check_finite(out.action_logits, "action head");
    check_finite(out.message_logits, "message head");
    check_finite(out.value, "value head");
    return out;
}

// ---- optimizers ----

struct OptimizerState {
    std::string kind;  // "adam" | "rmsprop"
    double lr = 0.0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;   // adam
    double decay = 0.99;                              // rmsprop
    double anneal_factor = 0.99, anneal_every = 1e6;  // rmsprop lr schedule
    int64_t step = 0;
    std::vector<std::vector<float>> m;  // adam first moment / rmsprop square average
    std::vector<std::vector<float>> v;  // adam second moment

    static OptimizerState adam(const ParamSet& ps, double lr, double beta1 = 0.9,
                               double beta2 = 0.999, double eps = 1e-8) {
        OptimizerState s;
        s.kind = "adam";
        s.lr = lr;
        s.beta1 = beta1;
        s.beta2 = beta2;
        s.eps = eps;
        for (const auto& p : ps.params) {
            s.m.emplace_back(p.value.size(), 0.f);
            s.v.emplace_back(p.value.size(), 0.f);
        }
        return s;
    }

    static OptimizerState rmsprop(const ParamSet& ps, double lr, double decay = 0.99,
                                  double eps = 1e-6, double anneal_factor = 0.99,
                                  double anneal_every = 1e6) {
        OptimizerState s;
        s.kind = "rmsprop";
        s.lr = lr;
        s.decay = decay;
        s.eps = eps;
        s.anneal_factor = anneal_factor;
        s.anneal_every = anneal_every;
        for (const auto& p : ps.params) s.m.emplace_back(p.value.size(), 0.f);
        return s;
    }
};

inline void check_grad_shapes(const OptimizerState& st, const ParamSet& ps,
                              const std::vector<std::vector<float>>& grads) {
    if (grads.size() != ps.params.size() || st.m.size() != ps.params.size())
        fail("optimizer: parameter/gradient count mismatch");
    for (size_t i = 0; i < grads.size(); ++i)
        if (grads[i].size() != ps.params[i].value.size())
            fail("optimizer: gradient shape mismatch for '", ps.params[i].name, "'");
}

inline void adam_step(OptimizerState& st, ParamSet& ps, const std::vector<std::vector<float>>& grads) {
    if (st.kind != "adam") fail("adam_step on ", st.kind, " state");
    check_grad_shapes(st, ps, grads);
    st.step += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (size_t i = 0; i < grads.size(); ++i) {
        auto& p = ps.params[i].value;
        auto& m = st.m[i];
        auto& v = st.v[i];
        const auto& g = grads[i];
        for (size_t j = 0; j < p.size(); ++j) {
            const double gj = g[j];
            const double mj = st.beta1 * m[j] + (1.0 - st.beta1) * gj;
            const double vj = st.beta2 * v[j] + (1.0 - st.beta2) * gj * gj;
            m[j] = static_cast<float>(mj);
            v[j] = static_cast<float>(vj);
            p[j] -= static_cast<float>(st.lr * (mj / bc1) / (std::sqrt(vj / bc2) + st.eps));
        }
    }
}

inline double rmsprop_effective_lr(const OptimizerState& st, int64_t global_step) {
    return st.lr * std::pow(st.anneal_factor, static_cast<double>(global_step) / st.anneal_every);
}

inline void rmsprop_step(OptimizerState& st, ParamSet& ps,
                         const std::vector<std::vector<float>>& grads, int64_t global_step) {
    if (st.kind != "rmsprop") fail("rmsprop_step on ", st.kind, " state");
    check_grad_shapes(st, ps, grads);
    st.step += 1;
    const double lr = rmsprop_effective_lr(st, global_step);
    for (size_t i = 0; i < grads.size(); ++i) {
        auto& p = ps.params[i].value;
        auto& s = st.m[i];
        const auto& g = grads[i];
        for (size_t j = 0; j < p.size(); ++j) {
            const double gj = g[j];
            const double sj = st.decay * s[j] + (1.0 - st.decay) * gj * gj;
            s[j] = static_cast<float>(sj);
            p[j] -= static_cast<float>(lr * gj / std::sqrt(sj + st.eps));
        }
    }
}

inline void optimizer_step(OptimizerState& st, ParamSet& ps,
                           const std::vector<std::vector<float>>& grads, int64_t global_step) {
    if (st.kind == "adam") adam_step(st, ps, grads);
    else rmsprop_step(st, ps, grads, global_step);
}

}  // namespace ecl
