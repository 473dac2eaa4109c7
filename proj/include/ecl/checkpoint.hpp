#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ecl/common.hpp"
#include "ecl/nets.hpp"
#include "ecl/rng.hpp"

namespace ecl {

// Versioned binary checkpoint: magic "ECL1", little-endian throughout.
// A blob is a global step plus named sections; typed helpers below serialize
// parameter sets, optimizer state and rng streams so that restore(save(x))
// is bit-exact.

struct CheckpointBlob {
    uint64_t global_step = 0;
    std::map<std::string, std::vector<uint8_t>> sections;
};

void save_checkpoint(const std::string& path, const CheckpointBlob& blob);
CheckpointBlob load_checkpoint(const std::string& path);  // version/magic errors are distinct

// Little-endian scratch buffer used for section payloads.
class ByteWriter {
public:
    std::vector<uint8_t> bytes;
    void put_u32(uint32_t v);
    void put_u64(uint64_t v);
    void put_i32(int32_t v) { put_u32(static_cast<uint32_t>(v)); }
    void put_f32(float v);
    void put_f64(double v);
    void put_string(const std::string& s);
    void put_raw(const void* data, size_t n);
};

class ByteReader {
public:
    ByteReader(const uint8_t* data, size_t size) : data_(data), size_(size) {}
    explicit ByteReader(const std::vector<uint8_t>& v) : ByteReader(v.data(), v.size()) {}
    uint32_t get_u32();
    uint64_t get_u64();
    int32_t get_i32() { return static_cast<int32_t>(get_u32()); }
    float get_f32();
    double get_f64();
    std::string get_string();
    void get_raw(void* out, size_t n);
    bool done() const { return off_ == size_; }
    size_t remaining() const { return size_ - off_; }

private:
    const uint8_t* data_;
    size_t size_;
    size_t off_ = 0;
    void need(size_t n);
};

std::vector<uint8_t> serialize_params(const ParamSet& ps);
// Shapes must match the receiving ParamSet; mismatch is a distinct error.
void deserialize_params(const std::vector<uint8_t>& bytes, ParamSet& ps);

std::vector<uint8_t> serialize_optimizer(const OptimizerState& st);
void deserialize_optimizer(const std::vector<uint8_t>& bytes, OptimizerState& st);

std::vector<uint8_t> serialize_rng(const Rng& rng);
void deserialize_rng(const std::vector<uint8_t>& bytes, Rng& rng);

}  // namespace ecl
