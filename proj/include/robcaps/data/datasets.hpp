#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "robcaps/core/io.hpp"
#include "robcaps/core/rng.hpp"
#include "robcaps/data/gzip.hpp"
#include "robcaps/data/idx.hpp"
#include "robcaps/data/mat5.hpp"
#include "robcaps/models/common.hpp"

namespace robcaps {

// ---------------------------------------------------------------------------
// Canonical dataset containers: per-split .rcat files (u8 images [N,H,W,C],
// i32 labels) plus a manifest recording geometry, source checksums and the
// processing applied at ingest. Everything downstream loads from these.
// ---------------------------------------------------------------------------

struct DatasetSplit {
    Tensor<uint8_t> images; // [N,H,W,C]
    std::vector<int32_t> labels;

    int64_t size() const { return images.rank() ? images.dim(0) : 0; }
};

struct IngestResult {
    std::string dir;
    bool skipped = false; // true when an identical container was already there
    nlohmann::json manifest;
};

namespace detail {

inline std::string split_path(const std::string& dir, const std::string& split) {
    return (std::filesystem::path(dir) / (split + ".rcat")).string();
}

inline nlohmann::json sources_json(const std::vector<std::pair<std::string, std::string>>& sources) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& [file, hash] : sources) arr.push_back({{"file", file}, {"hash", hash}});
    return arr;
}

} // namespace detail

inline nlohmann::json read_dataset_manifest(const std::string& dir) {
    return nlohmann::json::parse(read_text_file((std::filesystem::path(dir) / "manifest.json").string()));
}

/// True when `dir` already holds a container built from exactly these sources.
inline bool container_matches_sources(const std::string& dir,
                                      const std::vector<std::pair<std::string, std::string>>& sources) {
    namespace fs = std::filesystem;
    if (!fs::exists(fs::path(dir) / "manifest.json")) return false;
    nlohmann::json m;
    try {
        m = read_dataset_manifest(dir);
    } catch (const std::exception&) {
        return false;
    }
    nlohmann::json want = detail::sources_json(sources);
    return m.contains("sources") && m["sources"] == want;
}

inline void write_dataset_container(const std::string& dir, const std::string& name,
                                    const std::vector<std::pair<std::string, DatasetSplit>>& splits,
                                    int num_classes,
                                    const std::vector<std::pair<std::string, std::string>>& sources,
                                    nlohmann::json processing = nlohmann::json::object()) {
    if (splits.empty()) throw std::invalid_argument("dataset container: no splits");
    const Shape& s0 = splits.front().second.images.shape();
    nlohmann::json counts = nlohmann::json::object();
    nlohmann::json hashes = nlohmann::json::object();
    for (const auto& [split, data] : splits) {
        if (data.images.rank() != 4) throw std::invalid_argument("dataset container: images must be [N,H,W,C]");
        if (data.images.dim(1) != s0[1] || data.images.dim(2) != s0[2] || data.images.dim(3) != s0[3])
            throw std::invalid_argument("dataset container: splits disagree on geometry");
        if (static_cast<int64_t>(data.labels.size()) != data.size())
            throw std::invalid_argument("dataset container: label count mismatch");
        for (int32_t l : data.labels)
            if (l < 0 || l >= num_classes) throw std::invalid_argument("dataset container: label out of range");

        ArrayContainer c;
        c.put("images", data.images);
        Tensor<int32_t> lab({data.size()});
        for (int64_t i = 0; i < data.size(); ++i) lab[i] = data.labels[static_cast<size_t>(i)];
        c.put("labels", lab);
        auto bytes = c.serialize();
        write_file_bytes_atomic(detail::split_path(dir, split), bytes.data(), bytes.size());
        counts[split] = data.size();
        hashes[split] = hash_hex(fnv1a(bytes.data(), bytes.size()));
    }

    nlohmann::json m = {
        {"format_version", 1},
        {"name", name},
        {"geometry", {{"height", s0[1]}, {"width", s0[2]}, {"channels", s0[3]}}},
        {"num_classes", num_classes},
        {"counts", counts},
        {"split_hashes", hashes},
        {"sources", detail::sources_json(sources)},
        {"processing", processing},
    };
    write_text_file_atomic((std::filesystem::path(dir) / "manifest.json").string(), m.dump(2) + "\n");
}

inline DatasetSplit load_split_raw(const std::string& dir, const std::string& split, int64_t limit = -1) {
    ArrayContainer c = ArrayContainer::load(detail::split_path(dir, split));
    DatasetSplit out;
    out.images = c.get<uint8_t>("images");
    Tensor<int32_t> lab = c.get<int32_t>("labels");
    out.labels.assign(lab.data(), lab.data() + lab.numel());
    if (limit >= 0 && limit < out.size()) {
        Shape s = out.images.shape();
        int64_t row = s[1] * s[2] * s[3];
        Tensor<uint8_t> cut({limit, s[1], s[2], s[3]});
        std::copy(out.images.data(), out.images.data() + limit * row, cut.data());
        out.images = std::move(cut);
        out.labels.resize(static_cast<size_t>(limit));
    }
    return out;
}

/// Loads a split as model input: pixels scaled to [0,1]. The batch's dataset
/// id is taken from the manifest name; names outside the canonical six (e.g.
/// the archival 32x32 CIFAR copy) are refused since no model consumes them.
template <class T>
ImageBatch<T> load_split(const std::string& dir, const std::string& split, int64_t limit = -1) {
    nlohmann::json m = read_dataset_manifest(dir);
    DatasetSplit raw = load_split_raw(dir, split, limit);
    ImageBatch<T> b;
    b.dataset_id = dataset_from_string(m["name"].get<std::string>());
    b.data = Tensor<T>(raw.images.shape());
    for (int64_t i = 0; i < b.data.numel(); ++i) b.data[i] = static_cast<T>(raw.images[i]) / T(255);
    b.labels.assign(raw.labels.begin(), raw.labels.end());
    b.validate();
    return b;
}

// ---------------------------------------------------------------------------
// Batch utilities shared by the trainer and the evaluation harness.
// ---------------------------------------------------------------------------

template <class T>
ImageBatch<T> subset(const ImageBatch<T>& b, const std::vector<int64_t>& idx) {
    Shape s = b.data.shape();
    int64_t row = s[1] * s[2] * s[3];
    ImageBatch<T> out;
    out.dataset_id = b.dataset_id;
    out.data = Tensor<T>({static_cast<int64_t>(idx.size()), s[1], s[2], s[3]});
    out.labels.resize(idx.size());
    for (size_t k = 0; k < idx.size(); ++k) {
        int64_t i = idx[k];
        if (i < 0 || i >= b.size()) throw std::out_of_range("subset: index out of range");
        std::copy(b.data.data() + i * row, b.data.data() + (i + 1) * row,
                  out.data.data() + static_cast<int64_t>(k) * row);
        out.labels[k] = b.labels[static_cast<size_t>(i)];
    }
    return out;
}

/// First n images, in stored order.
template <class T>
ImageBatch<T> take(const ImageBatch<T>& b, int64_t n) {
    std::vector<int64_t> idx(static_cast<size_t>(std::min(n, b.size())));
    std::iota(idx.begin(), idx.end(), 0);
    return subset(b, idx);
}

/// Seeded uniform sample without replacement; the same (seed, n) always picks
/// the same images, which keeps attack evaluations comparable across runs.
template <class T>
ImageBatch<T> seeded_sample(const ImageBatch<T>& b, int64_t n, uint64_t seed) {
    if (n <= 0) throw std::invalid_argument("seeded_sample: need a positive sample size");
    if (n > b.size()) throw std::invalid_argument("seeded_sample: sample larger than dataset");
    std::vector<int64_t> idx(static_cast<size_t>(b.size()));
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    rng.shuffle(idx.begin(), idx.end());
    idx.resize(static_cast<size_t>(n));
    return subset(b, idx);
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/// Bilinear resize of one [H,W,C] image, half-pixel-center convention with
/// clamp-to-edge sampling. Used for the CIFAR 32->64 upscale and GTSRB crops.
template <class T>
Tensor<T> bilinear_resize(const Tensor<T>& img, int64_t oh, int64_t ow) {
    if (img.rank() != 3) throw std::invalid_argument("bilinear_resize: expected [H,W,C]");
    int64_t h = img.dim(0), w = img.dim(1), ch = img.dim(2);
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("bilinear_resize: bad output size");
    Tensor<T> out({oh, ow, ch});
    double sy = static_cast<double>(h) / static_cast<double>(oh);
    double sx = static_cast<double>(w) / static_cast<double>(ow);
    for (int64_t y = 0; y < oh; ++y) {
        double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
        int64_t y0 = static_cast<int64_t>(std::floor(fy));
        double wy = fy - static_cast<double>(y0);
        int64_t ya = std::clamp<int64_t>(y0, 0, h - 1), yb = std::clamp<int64_t>(y0 + 1, 0, h - 1);
        for (int64_t x = 0; x < ow; ++x) {
            double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
            int64_t x0 = static_cast<int64_t>(std::floor(fx));
            double wx = fx - static_cast<double>(x0);
            int64_t xa = std::clamp<int64_t>(x0, 0, w - 1), xb = std::clamp<int64_t>(x0 + 1, 0, w - 1);
            for (int64_t k = 0; k < ch; ++k) {
                double v = (1 - wy) * ((1 - wx) * img[(ya * w + xa) * ch + k] + wx * img[(ya * w + xb) * ch + k]) +
                           wy * ((1 - wx) * img[(yb * w + xa) * ch + k] + wx * img[(yb * w + xb) * ch + k]);
                out[(y * ow + x) * ch + k] = static_cast<T>(v);
            }
        }
    }
    return out;
}

namespace detail {

inline uint8_t round_u8(double v) {
    return static_cast<uint8_t>(std::clamp(std::lround(v), 0l, 255l));
}

/// Resize a u8 [H,W,C] image through double precision.
inline Tensor<uint8_t> resize_u8(const Tensor<uint8_t>& img, int64_t oh, int64_t ow) {
    Tensor<double> f(img.shape());
    for (int64_t i = 0; i < img.numel(); ++i) f[i] = img[i];
    Tensor<double> r = bilinear_resize(f, oh, ow);
    Tensor<uint8_t> out(r.shape());
    for (int64_t i = 0; i < r.numel(); ++i) out[i] = round_u8(r[i]);
    return out;
}

/// Per-image min-max contrast stretch, jointly over channels, u8 in/out.
inline void contrast_stretch_u8(Tensor<uint8_t>& img) {
    uint8_t lo = 255, hi = 0;
    for (int64_t i = 0; i < img.numel(); ++i) {
        lo = std::min(lo, img[i]);
        hi = std::max(hi, img[i]);
    }
    if (hi <= lo) return;
    double scale = 255.0 / (hi - lo);
    for (int64_t i = 0; i < img.numel(); ++i)
        img[i] = round_u8((img[i] - lo) * scale);
}

} // namespace detail

// ---------------------------------------------------------------------------
// MNIST (IDX) -> 40x40 container. Digits are zero-padded onto the larger
// canvas, centered, so the geometry matches the affine-MNIST convention.
// ---------------------------------------------------------------------------

namespace detail {

inline DatasetSplit mnist_split_from_idx(const std::vector<uint8_t>& img_file,
                                         const std::vector<uint8_t>& lab_file, int64_t side) {
    IdxArray im = parse_idx(img_file);
    IdxArray lb = parse_idx(lab_file);
    if (im.dims.size() != 3) throw std::runtime_error("mnist: image file must be rank 3");
    if (lb.dims.size() != 1) throw std::runtime_error("mnist: label file must be rank 1");
    int64_t n = im.dims[0], h = im.dims[1], w = im.dims[2];
    if (lb.dims[0] != n) throw std::runtime_error("mnist: image/label count mismatch");
    if (h > side || w > side) throw std::runtime_error("mnist: images larger than target canvas");

    DatasetSplit out;
    out.images = Tensor<uint8_t>({n, side, side, 1});
    std::fill(out.images.data(), out.images.data() + out.images.numel(), uint8_t(0));
    int64_t ro = (side - h) / 2, co = (side - w) / 2;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t r = 0; r < h; ++r)
            for (int64_t c = 0; c < w; ++c)
                out.images[((i * side + (r + ro)) * side + (c + co))] =
                    im.bytes[static_cast<size_t>((i * h + r) * w + c)];
    out.labels.assign(lb.bytes.begin(), lb.bytes.end());
    return out;
}

} // namespace detail

/// src_dir must hold the four standard MNIST idx(.gz) files.
inline IngestResult ingest_mnist40(const std::string& src_dir, const std::string& out_dir) {
    namespace fs = std::filesystem;
    const char* files[4] = {"train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz",
                            "t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz"};
    std::vector<std::pair<std::string, std::string>> sources;
    for (const char* f : files) {
        std::string p = (fs::path(src_dir) / f).string();
        sources.emplace_back(f, file_hash_hex(p));
    }
    std::string dir = (fs::path(out_dir) / "mnist40").string();
    if (container_matches_sources(dir, sources))
        return {dir, true, read_dataset_manifest(dir)};

    auto read = [&](int i) { return read_maybe_gz((fs::path(src_dir) / files[i]).string()); };
    DatasetSplit train = detail::mnist_split_from_idx(read(0), read(1), 40);
    DatasetSplit test = detail::mnist_split_from_idx(read(2), read(3), 40);
    write_dataset_container(dir, "mnist40", {{"train", std::move(train)}, {"test", std::move(test)}}, 10,
                            sources, {{"pad_to", 40}, {"placement", "centered"}});
    return {dir, false, read_dataset_manifest(dir)};
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary batches -> 64x64 container (+ archival 32x32 copy).
// ---------------------------------------------------------------------------

namespace detail {

/// One CIFAR-10 .bin file: records of [label u8][3072 u8 planar RGB 32x32].
inline void append_cifar_records(const std::vector<uint8_t>& file, std::vector<uint8_t>& pixels,
                                 std::vector<int32_t>& labels) {
    constexpr size_t kRecord = 1 + 3 * 32 * 32;
    if (file.size() % kRecord) throw std::runtime_error("cifar10: file size is not a whole number of records");
    for (size_t off = 0; off < file.size(); off += kRecord) {
        labels.push_back(file[off]);
        const uint8_t* planes = file.data() + off + 1;
        for (int64_t y = 0; y < 32; ++y)
            for (int64_t x = 0; x < 32; ++x)
                for (int64_t k = 0; k < 3; ++k) // planar -> interleaved
                    pixels.push_back(planes[k * 1024 + y * 32 + x]);
    }
}

inline DatasetSplit upscale_split(const DatasetSplit& in, int64_t side) {
    Shape s = in.images.shape();
    DatasetSplit out;
    out.labels = in.labels;
    out.images = Tensor<uint8_t>({s[0], side, side, s[3]});
    int64_t in_row = s[1] * s[2] * s[3], out_row = side * side * s[3];
    for (int64_t i = 0; i < s[0]; ++i) {
        Tensor<uint8_t> img({s[1], s[2], s[3]});
        std::copy(in.images.data() + i * in_row, in.images.data() + (i + 1) * in_row, img.data());
        Tensor<uint8_t> up = resize_u8(img, side, side);
        std::copy(up.data(), up.data() + out_row, out.images.data() + i * out_row);
    }
    return out;
}

} // namespace detail

/// src_dir must hold data_batch_1..5.bin and test_batch.bin.
inline IngestResult ingest_cifar10(const std::string& src_dir, const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::vector<std::string> files;
    for (int i = 1; i <= 5; ++i) files.push_back("data_batch_" + std::to_string(i) + ".bin");
    files.push_back("test_batch.bin");
    std::vector<std::pair<std::string, std::string>> sources;
    for (const auto& f : files) sources.emplace_back(f, file_hash_hex((fs::path(src_dir) / f).string()));

    std::string dir = (fs::path(out_dir) / "cifar10").string();
    if (container_matches_sources(dir, sources))
        return {dir, true, read_dataset_manifest(dir)};

    auto load_records = [&](size_t first, size_t count) {
        std::vector<uint8_t> px;
        std::vector<int32_t> lab;
        for (size_t i = first; i < first + count; ++i)
            detail::append_cifar_records(read_file_bytes((fs::path(src_dir) / files[i]).string()), px, lab);
        DatasetSplit s;
        s.images = Tensor<uint8_t>({static_cast<int64_t>(lab.size()), 32, 32, 3});
        std::copy(px.begin(), px.end(), s.images.data());
        s.labels = std::move(lab);
        return s;
    };
    DatasetSplit train32 = load_records(0, 5);
    DatasetSplit test32 = load_records(5, 1);

    // Archival copy at the original geometry, then the canonical 64x64 set.
    write_dataset_container((fs::path(out_dir) / "cifar10_32").string(), "cifar10_32",
                            {{"train", train32}, {"test", test32}}, 10, sources,
                            {{"note", "original geometry, not a model input"}});
    DatasetSplit train64 = detail::upscale_split(train32, 64);
    DatasetSplit test64 = detail::upscale_split(test32, 64);
    write_dataset_container(dir, "cifar10", {{"train", std::move(train64)}, {"test", std::move(test64)}}, 10,
                            sources, {{"resized_to", 64}, {"interpolation", "bilinear"}});
    return {dir, false, read_dataset_manifest(dir)};
}

// ---------------------------------------------------------------------------
// GTSRB (PPM crops + csv annotations) -> 32x32 container.
// ---------------------------------------------------------------------------

struct PpmImage {
    int64_t width = 0, height = 0;
    std::vector<uint8_t> rgb; // interleaved
};

inline PpmImage parse_ppm(const std::vector<uint8_t>& b) {
    size_t pos = 0;
    auto token = [&]() -> std::string {
        while (pos < b.size()) {
            if (std::isspace(b[pos])) { ++pos; continue; }
            if (b[pos] == '#') { // comment to end of line
                while (pos < b.size() && b[pos] != '\n') ++pos;
                continue;
            }
            break;
        }
        size_t start = pos;
        while (pos < b.size() && !std::isspace(b[pos])) ++pos;
        return std::string(b.begin() + static_cast<std::ptrdiff_t>(start), b.begin() + static_cast<std::ptrdiff_t>(pos));
    };
    if (token() != "P6") throw std::runtime_error("ppm: only binary P6 is supported");
    PpmImage img;
    img.width = std::stoll(token());
    img.height = std::stoll(token());
    long maxval = std::stol(token());
    if (maxval != 255) throw std::runtime_error("ppm: only maxval 255 is supported");
    ++pos; // single whitespace after maxval
    size_t need = static_cast<size_t>(img.width * img.height * 3);
    if (b.size() - pos < need) throw std::runtime_error("ppm: truncated pixel data");
    img.rgb.assign(b.begin() + static_cast<std::ptrdiff_t>(pos),
                   b.begin() + static_cast<std::ptrdiff_t>(pos + need));
    return img;
}

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line, char sep) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        size_t end = line.find(sep, start);
        std::string f = line.substr(start, end == std::string::npos ? std::string::npos : end - start);
        while (!f.empty() && (f.back() == '\r' || f.back() == '\n')) f.pop_back();
        out.push_back(f);
        if (end == std::string::npos) break;
        start = end + 1;
    }
    return out;
}

struct GtsrbRow {
    std::string filename;
    int64_t x1, y1, x2, y2;
    int32_t class_id;
};

/// GT-*.csv: semicolon-separated with a header row
/// (Filename;Width;Height;Roi.X1;Roi.Y1;Roi.X2;Roi.Y2;ClassId).
inline std::vector<GtsrbRow> parse_gtsrb_csv(const std::string& text) {
    std::vector<GtsrbRow> rows;
    size_t pos = 0;
    bool header = true;
    while (pos < text.size()) {
        size_t end = text.find('\n', pos);
        std::string line = text.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
        pos = end == std::string::npos ? text.size() : end + 1;
        if (header) { header = false; continue; }
        if (line.empty() || line == "\r") continue;
        auto f = split_fields(line, ';');
        if (f.size() < 8) throw std::runtime_error("gtsrb: malformed csv row: " + line);
        rows.push_back({f[0], std::stoll(f[3]), std::stoll(f[4]), std::stoll(f[5]), std::stoll(f[6]),
                        static_cast<int32_t>(std::stol(f[7]))});
    }
    return rows;
}

inline Tensor<uint8_t> gtsrb_image(const std::string& ppm_path, const GtsrbRow& row, bool contrast) {
    PpmImage ppm = parse_ppm(read_file_bytes(ppm_path));
    int64_t x1 = std::clamp<int64_t>(row.x1, 0, ppm.width - 1);
    int64_t y1 = std::clamp<int64_t>(row.y1, 0, ppm.height - 1);
    int64_t x2 = std::clamp<int64_t>(row.x2, x1 + 1, ppm.width);
    int64_t y2 = std::clamp<int64_t>(row.y2, y1 + 1, ppm.height);
    Tensor<uint8_t> crop({y2 - y1, x2 - x1, 3});
    for (int64_t y = y1; y < y2; ++y)
        for (int64_t x = x1; x < x2; ++x)
            for (int64_t k = 0; k < 3; ++k)
                crop[((y - y1) * (x2 - x1) + (x - x1)) * 3 + k] =
                    ppm.rgb[static_cast<size_t>((y * ppm.width + x) * 3 + k)];
    Tensor<uint8_t> img = resize_u8(crop, 32, 32);
    if (contrast) contrast_stretch_u8(img);
    return img;
}

inline DatasetSplit gtsrb_split_from_csvs(const std::vector<std::pair<std::string, std::string>>& csvs,
                                          bool contrast) {
    namespace fs = std::filesystem;
    DatasetSplit out;
    std::vector<Tensor<uint8_t>> imgs;
    for (const auto& [csv_path, img_dir] : csvs) {
        for (const auto& row : parse_gtsrb_csv(read_text_file(csv_path))) {
            imgs.push_back(gtsrb_image((fs::path(img_dir) / row.filename).string(), row, contrast));
            out.labels.push_back(row.class_id);
        }
    }
    out.images = Tensor<uint8_t>({static_cast<int64_t>(imgs.size()), 32, 32, 3});
    int64_t rowlen = 32 * 32 * 3;
    for (size_t i = 0; i < imgs.size(); ++i)
        std::copy(imgs[i].data(), imgs[i].data() + rowlen, out.images.data() + static_cast<int64_t>(i) * rowlen);
    return out;
}

} // namespace detail

/// Expects the standard GTSRB layout: Final_Training/Images/<class>/GT-*.csv
/// with per-class ppm files, and Final_Test/Images/GT-final_test.csv. Sign
/// crops are taken from the annotated ROI and resized to 32x32; per-image
/// contrast stretching is on by default and recorded in the manifest.
inline IngestResult ingest_gtsrb(const std::string& src_dir, const std::string& out_dir,
                                 bool contrast_normalize = true) {
    namespace fs = std::filesystem;
    std::vector<std::pair<std::string, std::string>> train_csvs, test_csvs;
    fs::path train_root = fs::path(src_dir) / "Final_Training" / "Images";
    if (!fs::exists(train_root)) throw std::runtime_error("gtsrb: missing " + train_root.string());
    std::vector<std::string> class_dirs;
    for (const auto& e : fs::directory_iterator(train_root))
        if (e.is_directory()) class_dirs.push_back(e.path().string());
    std::sort(class_dirs.begin(), class_dirs.end());
    for (const auto& d : class_dirs)
        for (const auto& e : fs::directory_iterator(d))
            if (e.path().extension() == ".csv") train_csvs.emplace_back(e.path().string(), d);
    fs::path test_dir = fs::path(src_dir) / "Final_Test" / "Images";
    test_csvs.emplace_back((test_dir / "GT-final_test.csv").string(), test_dir.string());

    std::vector<std::pair<std::string, std::string>> sources;
    for (const auto& [csv, _] : train_csvs) sources.emplace_back(fs::path(csv).filename().string(), file_hash_hex(csv));
    for (const auto& [csv, _] : test_csvs) sources.emplace_back(fs::path(csv).filename().string(), file_hash_hex(csv));

    std::string dir = (fs::path(out_dir) / "gtsrb").string();
    if (container_matches_sources(dir, sources))
        return {dir, true, read_dataset_manifest(dir)};

    DatasetSplit train = detail::gtsrb_split_from_csvs(train_csvs, contrast_normalize);
    DatasetSplit test = detail::gtsrb_split_from_csvs(test_csvs, contrast_normalize);
    write_dataset_container(dir, "gtsrb", {{"train", std::move(train)}, {"test", std::move(test)}}, 43, sources,
                            {{"roi_cropped", true},
                             {"resized_to", 32},
                             {"contrast_normalized", contrast_normalize}});
    return {dir, false, read_dataset_manifest(dir)};
}

// ---------------------------------------------------------------------------
// Published affine-MNIST container (.mat, optionally gzipped) -> test-only
// container. Used for the MNIST row of the affine-robustness comparison.
// ---------------------------------------------------------------------------

inline IngestResult ingest_affnist(const std::string& mat_path, const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::vector<std::pair<std::string, std::string>> sources{
        {fs::path(mat_path).filename().string(), file_hash_hex(mat_path)}};
    std::string dir = (fs::path(out_dir) / "affnist").string();
    if (container_matches_sources(dir, sources))
        return {dir, true, read_dataset_manifest(dir)};

    auto vars = mat5::parse(read_maybe_gz(mat_path));
    const mat5::Array& data = mat5::find(vars, "affNISTdata");
    const mat5::Array& image = data.field("image");
    const mat5::Array& label = data.field("label_int");
    if (image.dims.size() != 2 || image.dims[0] != 40 * 40)
        throw std::runtime_error("affnist: expected a 1600xN image matrix");
    int64_t n = image.dims[1];
    if (label.numel() != n) throw std::runtime_error("affnist: image/label count mismatch");

    DatasetSplit test;
    test.images = Tensor<uint8_t>({n, 40, 40, 1});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t r = 0; r < 40; ++r)
            for (int64_t c = 0; c < 40; ++c) // columns are column-major 40x40 images
                test.images[(i * 40 + r) * 40 + c] = detail::round_u8(image.at(i * 1600 + c * 40 + r));
    test.labels.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) test.labels[static_cast<size_t>(i)] = static_cast<int32_t>(label.at(i));

    write_dataset_container(dir, "affnist", {{"test", std::move(test)}}, 10, sources,
                            {{"origin", "published affine-MNIST container"}});
    return {dir, false, read_dataset_manifest(dir)};
}

} // namespace robcaps
