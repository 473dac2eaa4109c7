#include "ecl/digit_env.hpp"

#include <fstream>

namespace ecl {

namespace {

constexpr uint32_t kImageMagic = 2051;  // 0x00000803
constexpr uint32_t kLabelMagic = 2049;  // 0x00000801

uint32_t read_be32(std::istream& in, const std::string& path, const char* what) {
    uint8_t b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        fail("idx: ", path, " truncated while reading ", what);
    return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

}  // namespace

std::vector<float> IdxDataset::image(int index) const {
    if (index < 0 || static_cast<size_t>(index) >= count())
        fail("IdxDataset: image index ", index, " out of range [0,", count(), ")");
    const size_t n = static_cast<size_t>(rows) * cols;
    std::vector<float> out(n);
    const uint8_t* src = images.data() + static_cast<size_t>(index) * n;
    for (size_t i = 0; i < n; ++i) out[i] = static_cast<float>(src[i]) / 255.0f;
    return out;
}

int IdxDataset::label(int index) const {
    if (index < 0 || static_cast<size_t>(index) >= count())
        fail("IdxDataset: label index ", index, " out of range [0,", count(), ")");
    return labels[static_cast<size_t>(index)];
}

IdxDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream fi(images_path, std::ios::binary);
    if (!fi) fail("idx: cannot open image file ", images_path);
    std::ifstream fl(labels_path, std::ios::binary);
    if (!fl) fail("idx: cannot open label file ", labels_path);

    const uint32_t im = read_be32(fi, images_path, "magic");
    if (im != kImageMagic)
        fail("idx: wrong magic in ", images_path, ": got ", im, ", want ", kImageMagic);
    const uint32_t lm = read_be32(fl, labels_path, "magic");
    if (lm != kLabelMagic)
        fail("idx: wrong magic in ", labels_path, ": got ", lm, ", want ", kLabelMagic);

    IdxDataset ds;
    const uint32_t n_images = read_be32(fi, images_path, "count");
    ds.rows = static_cast<int>(read_be32(fi, images_path, "rows"));
    ds.cols = static_cast<int>(read_be32(fi, images_path, "cols"));
    const uint32_t n_labels = read_be32(fl, labels_path, "count");
    if (n_images != n_labels)
        fail("idx: count mismatch: ", n_images, " images vs ", n_labels, " labels");

    ds.images.resize(static_cast<size_t>(n_images) * ds.rows * ds.cols);
    if (!fi.read(reinterpret_cast<char*>(ds.images.data()),
                 static_cast<std::streamsize>(ds.images.size())))
        fail("idx: ", images_path, " truncated mid-payload (want ", ds.images.size(), " pixel bytes)");
    ds.labels.resize(n_labels);
    if (!fl.read(reinterpret_cast<char*>(ds.labels.data()),
                 static_cast<std::streamsize>(ds.labels.size())))
        fail("idx: ", labels_path, " truncated mid-payload (want ", ds.labels.size(), " label bytes)");
    for (uint8_t l : ds.labels)
        if (l > 9) fail("idx: label value ", int(l), " outside 0..9 in ", labels_path);
    return ds;
}

DigitRound sample_round_symbolic(Rng& rng) {
    DigitRound r;
    r.speaker_digit = rng.uniform_int(kDigits);
    r.listener_digit = rng.uniform_int(kDigits);
    return r;
}

DigitRound sample_round(const IdxDataset& dataset, Rng& rng) {
    if (dataset.count() == 0) fail("sample_round: empty dataset");
    DigitRound r;
    r.speaker_index = rng.uniform_int(static_cast<int>(dataset.count()));
    r.listener_index = rng.uniform_int(static_cast<int>(dataset.count()));
    r.speaker_digit = dataset.label(r.speaker_index);
    r.listener_digit = dataset.label(r.listener_index);
    return r;
}

int resolve_round(const DigitRound& round, int listener_action) {
    if (listener_action < 0 || listener_action >= kSumActions)
        fail("resolve_round: action ", listener_action, " outside [0,", kSumActions, ")");
    return listener_action == round.speaker_digit + round.listener_digit ? 1 : 0;
}

}  // namespace ecl
