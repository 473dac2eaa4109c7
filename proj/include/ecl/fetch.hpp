#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ecl/common.hpp"

namespace ecl {

std::string sha256_hex(const uint8_t* data, size_t size);
std::vector<uint8_t> gunzip(const std::vector<uint8_t>& compressed);

// Downloads the four MNIST idx files (gzipped) from base_url, verifies the
// sha256 of each payload when an expected digest is supplied, gunzips, and
// writes the raw idx files into out_dir. Existing files are kept unless
// force is set. Returns the number of files written.
//
// expected_sha256 maps the remote filename (e.g. "train-images-idx3-ubyte.gz")
// to the hex digest of the compressed file. Files without an entry are
// fetched unverified, with a warning.
int fetch_mnist(const std::string& base_url, const std::string& out_dir,
                const std::map<std::string, std::string>& expected_sha256, bool force);

}  // namespace ecl
