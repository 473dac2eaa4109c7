#include "ecl/fetch.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include <openssl/evp.h>
#include <zlib.h>

#include <httplib.h>

namespace ecl {

namespace fs = std::filesystem;

std::string sha256_hex(const uint8_t* data, size_t size) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!EVP_Digest(data, size, digest, &len, EVP_sha256(), nullptr))
        fail("sha256: digest computation failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::vector<uint8_t> gunzip(const std::vector<uint8_t>& compressed) {
    z_stream zs{};
    // 16 + MAX_WBITS: gzip container
    if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) fail("gunzip: inflateInit failed");
    std::vector<uint8_t> out;
    std::vector<uint8_t> buf(1 << 16);
    zs.next_in = const_cast<Bytef*>(compressed.data());
    zs.avail_in = static_cast<uInt>(compressed.size());
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        zs.next_out = buf.data();
        zs.avail_out = static_cast<uInt>(buf.size());
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            fail("gunzip: corrupt stream (zlib rc=", rc, ")");
        }
        out.insert(out.end(), buf.data(), buf.data() + (buf.size() - zs.avail_out));
    }
    inflateEnd(&zs);
    return out;
}

namespace {

std::vector<uint8_t> http_get(const std::string& base_url, const std::string& path) {
    auto scheme_end = base_url.find("://");
    if (scheme_end == std::string::npos) fail("fetch: bad url '", base_url, "'");
    const std::string scheme = base_url.substr(0, scheme_end);
    if (scheme != "http") fail("fetch: only http:// urls are supported, got '", scheme, "'");
    std::string rest = base_url.substr(scheme_end + 3);
    std::string host = rest, prefix;
    if (auto slash = rest.find('/'); slash != std::string::npos) {
        host = rest.substr(0, slash);
        prefix = rest.substr(slash);
    }
    httplib::Client client(("http://" + host).c_str());
    client.set_read_timeout(60, 0);
    auto res = client.Get((prefix + "/" + path).c_str());
    if (!res) fail("fetch: no response from ", host, " for ", path);
    if (res->status != 200) fail("fetch: HTTP ", res->status, " for ", path);
    return std::vector<uint8_t>(res->body.begin(), res->body.end());
}

}  // namespace

int fetch_mnist(const std::string& base_url, const std::string& out_dir,
                const std::map<std::string, std::string>& expected_sha256, bool force) {
    static const std::pair<const char*, const char*> kFiles[] = {
        {"train-images-idx3-ubyte.gz", "train-images-idx3-ubyte"},
        {"train-labels-idx1-ubyte.gz", "train-labels-idx1-ubyte"},
        {"t10k-images-idx3-ubyte.gz", "t10k-images-idx3-ubyte"},
        {"t10k-labels-idx1-ubyte.gz", "t10k-labels-idx1-ubyte"},
    };
    fs::create_directories(out_dir);
    int written = 0;
    for (const auto& [remote, local] : kFiles) {
        const std::string out_path = out_dir + "/" + local;
        if (fs::exists(out_path) && !force) {
            std::cerr << "fetch-mnist: " << out_path << " exists, skipping (use --force to refetch)\n";
            continue;
        }
        auto gz = http_get(base_url, remote);
        auto it = expected_sha256.find(remote);
        if (it != expected_sha256.end()) {
            const std::string got = sha256_hex(gz.data(), gz.size());
            if (got != it->second)
                fail("fetch-mnist: checksum mismatch for ", remote, ": got ", got, ", want ", it->second);
        } else {
            std::cerr << "fetch-mnist: no expected sha256 for " << remote << "; downloaded unverified ("
                      << sha256_hex(gz.data(), gz.size()) << ")\n";
        }
        auto raw = gunzip(gz);
        std::ofstream out(out_path, std::ios::binary);
        if (!out) fail("fetch-mnist: cannot write ", out_path);
        out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        if (!out) fail("fetch-mnist: short write to ", out_path);
        ++written;
    }
    return written;
}

}  // namespace ecl
