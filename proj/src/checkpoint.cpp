#include "ecl/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace ecl {

namespace {
constexpr char kMagic[4] = {'E', 'C', 'L', '1'};
constexpr uint32_t kVersion = 1;
}  // namespace

void ByteWriter::put_u32(uint32_t v) { put_raw(&v, 4); }
void ByteWriter::put_u64(uint64_t v) { put_raw(&v, 8); }
void ByteWriter::put_f32(float v) { put_raw(&v, 4); }
void ByteWriter::put_f64(double v) { put_raw(&v, 8); }
void ByteWriter::put_string(const std::string& s) {
    put_u32(static_cast<uint32_t>(s.size()));
    put_raw(s.data(), s.size());
}
void ByteWriter::put_raw(const void* data, size_t n) {
    const auto* b = static_cast<const uint8_t*>(data);
    bytes.insert(bytes.end(), b, b + n);
}

void ByteReader::need(size_t n) {
    if (off_ + n > size_) fail("checkpoint: truncated section (need ", n, " bytes, have ", size_ - off_, ")");
}
uint32_t ByteReader::get_u32() {
    need(4);
    uint32_t v;
    std::memcpy(&v, data_ + off_, 4);
    off_ += 4;
    return v;
}
uint64_t ByteReader::get_u64() {
    need(8);
    uint64_t v;
    std::memcpy(&v, data_ + off_, 8);
    off_ += 8;
    return v;
}
float ByteReader::get_f32() {
    need(4);
    float v;
    std::memcpy(&v, data_ + off_, 4);
    off_ += 4;
    return v;
}
double ByteReader::get_f64() {
    need(8);
    double v;
    std::memcpy(&v, data_ + off_, 8);
    off_ += 8;
    return v;
}
std::string ByteReader::get_string() {
    const uint32_t n = get_u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + off_), n);
    off_ += n;
    return s;
}
void ByteReader::get_raw(void* out, size_t n) {
    need(n);
    std::memcpy(out, data_ + off_, n);
    off_ += n;
}

void save_checkpoint(const std::string& path, const CheckpointBlob& blob) {
    ByteWriter w;
    w.put_raw(kMagic, 4);
    w.put_u32(kVersion);
    w.put_u64(blob.global_step);
    w.put_u32(static_cast<uint32_t>(blob.sections.size()));
    for (const auto& [name, payload] : blob.sections) {
        w.put_string(name);
        w.put_u64(payload.size());
        w.put_raw(payload.data(), payload.size());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("checkpoint: cannot open ", path, " for writing");
    out.write(reinterpret_cast<const char*>(w.bytes.data()), static_cast<std::streamsize>(w.bytes.size()));
    if (!out) fail("checkpoint: short write to ", path);
}

CheckpointBlob load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("checkpoint: cannot open ", path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 8) fail("checkpoint: ", path, " too small to hold a header");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        fail("checkpoint: bad magic in ", path, " (want ECL1)");
    ByteReader r(bytes.data() + 4, bytes.size() - 4);
    const uint32_t version = r.get_u32();
    if (version != kVersion)
        fail("checkpoint: version mismatch in ", path, ": got ", version, ", want ", kVersion);
    CheckpointBlob blob;
    blob.global_step = r.get_u64();
    const uint32_t n = r.get_u32();
    for (uint32_t i = 0; i < n; ++i) {
        std::string name = r.get_string();
        const uint64_t len = r.get_u64();
        std::vector<uint8_t> payload(len);
        r.get_raw(payload.data(), len);
        blob.sections.emplace(std::move(name), std::move(payload));
    }
    if (!r.done()) fail("checkpoint: trailing bytes in ", path);
    return blob;
}

std::vector<uint8_t> serialize_params(const ParamSet& ps) {
    ByteWriter w;
    w.put_u32(static_cast<uint32_t>(ps.params.size()));
    for (const auto& p : ps.params) {
        w.put_string(p.name);
        w.put_u32(static_cast<uint32_t>(p.shape.size()));
        for (int d : p.shape) w.put_i32(d);
        w.put_raw(p.value.data(), p.value.size() * sizeof(float));
    }
    return std::move(w.bytes);
}

void deserialize_params(const std::vector<uint8_t>& bytes, ParamSet& ps) {
    ByteReader r(bytes);
    const uint32_t n = r.get_u32();
    if (n != ps.params.size())
        fail("checkpoint: parameter count mismatch: blob has ", n, ", net has ", ps.params.size());
    for (auto& p : ps.params) {
        const std::string name = r.get_string();
        if (name != p.name) fail("checkpoint: parameter name mismatch: '", name, "' vs '", p.name, "'");
        Shape shape(r.get_u32());
        for (auto& d : shape) d = r.get_i32();
        if (shape != p.shape)
            fail("checkpoint: shape mismatch for '", p.name, "': blob ", shape_str(shape), " vs net ",
                 shape_str(p.shape));
        r.get_raw(p.value.data(), p.value.size() * sizeof(float));
    }
}

std::vector<uint8_t> serialize_optimizer(const OptimizerState& st) {
    ByteWriter w;
    w.put_string(st.kind);
    w.put_f64(st.lr);
    w.put_f64(st.beta1);
    w.put_f64(st.beta2);
    w.put_f64(st.eps);
    w.put_f64(st.decay);
    w.put_f64(st.anneal_factor);
    w.put_f64(st.anneal_every);
    w.put_u64(static_cast<uint64_t>(st.step));
    auto put_bufs = [&w](const std::vector<std::vector<float>>& bufs) {
        w.put_u32(static_cast<uint32_t>(bufs.size()));
        for (const auto& b : bufs) {
            w.put_u64(b.size());
            w.put_raw(b.data(), b.size() * sizeof(float));
        }
    };
    put_bufs(st.m);
    put_bufs(st.v);
    return std::move(w.bytes);
}

void deserialize_optimizer(const std::vector<uint8_t>& bytes, OptimizerState& st) {
    ByteReader r(bytes);
    st.kind = r.get_string();
    st.lr = r.get_f64();
    st.beta1 = r.get_f64();
    st.beta2 = r.get_f64();
    st.eps = r.get_f64();
    st.decay = r.get_f64();
    st.anneal_factor = r.get_f64();
    st.anneal_every = r.get_f64();
    st.step = static_cast<int64_t>(r.get_u64());
    auto get_bufs = [&r](std::vector<std::vector<float>>& bufs) {
        bufs.resize(r.get_u32());
        for (auto& b : bufs) {
            b.resize(r.get_u64());
            r.get_raw(b.data(), b.size() * sizeof(float));
        }
    };
    get_bufs(st.m);
    get_bufs(st.v);
}

std::vector<uint8_t> serialize_rng(const Rng& rng) {
    ByteWriter w;
    const auto st = rng.state();
    for (uint64_t s : st) w.put_u64(s);
    return std::move(w.bytes);
}

void deserialize_rng(const std::vector<uint8_t>& bytes, Rng& rng) {
    ByteReader r(bytes);
    std::array<uint64_t, 4> st;
    for (auto& s : st) s = r.get_u64();
    rng.set_state(st);
}

}  // namespace ecl
