#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "robcaps/core/rng.hpp"
#include "robcaps/data/datasets.hpp"

namespace robcaps {

// ---------------------------------------------------------------------------
// Affine test-set generation: every clean test image gets one random
// translation + rotation + zoom, sampled inside fixed bounds, applied with
// bilinear resampling over a black background. Sampling is per-image seeded so
// regeneration is bit-exact and images can be processed in any order.
// ---------------------------------------------------------------------------

struct AffinePolicy {
    double translation_fraction_lo = 0.10; // of the image side
    double translation_fraction_hi = 0.25;
    double rotation_range_degrees = 20.0;  // symmetric: theta in [-range, +range]
    double rotation_step_degrees = 2.0;    // rotation grid spacing
    double zoom_lo = 0.8;                  // per-axis, continuous uniform
    double zoom_hi = 1.2;
    uint64_t seed = 0;

    void validate() const {
        if (!(translation_fraction_lo >= 0 && translation_fraction_hi >= translation_fraction_lo &&
              translation_fraction_hi <= 1))
            throw std::invalid_argument("affine policy: bad translation fractions");
        if (!(rotation_range_degrees >= 0)) throw std::invalid_argument("affine policy: bad rotation range");
        if (rotation_range_degrees > 0 && !(rotation_step_degrees > 0))
            throw std::invalid_argument("affine policy: rotation step must be positive");
        if (!(zoom_lo > 0 && zoom_hi >= zoom_lo)) throw std::invalid_argument("affine policy: bad zoom bounds");
    }

    // Translation pixel grid for a given image side: every integer magnitude
    // in [ceil(lo*side), floor(hi*side)].
    int64_t min_pixels(int64_t side) const { return static_cast<int64_t>(std::ceil(translation_fraction_lo * static_cast<double>(side))); }
    int64_t max_pixels(int64_t side) const { return static_cast<int64_t>(std::floor(translation_fraction_hi * static_cast<double>(side))); }
};

struct AffineParams {
    int64_t dx = 0; // columns, positive moves content right
    int64_t dy = 0; // rows, positive moves content down
    double theta = 0;
    double zx = 1, zy = 1;
};

inline nlohmann::json policy_json(const AffinePolicy& p) {
    return {{"translation_fraction_lo", p.translation_fraction_lo},
            {"translation_fraction_hi", p.translation_fraction_hi},
            {"rotation_range_degrees", p.rotation_range_degrees},
            {"rotation_step_degrees", p.rotation_step_degrees},
            {"zoom_lo", p.zoom_lo},
            {"zoom_hi", p.zoom_hi},
            {"seed", p.seed}};
}

inline AffinePolicy policy_from_json(const nlohmann::json& j) {
    AffinePolicy p;
    p.translation_fraction_lo = j.at("translation_fraction_lo").get<double>();
    p.translation_fraction_hi = j.at("translation_fraction_hi").get<double>();
    p.rotation_range_degrees = j.at("rotation_range_degrees").get<double>();
    p.rotation_step_degrees = j.at("rotation_step_degrees").get<double>();
    p.zoom_lo = j.at("zoom_lo").get<double>();
    p.zoom_hi = j.at("zoom_hi").get<double>();
    p.seed = j.at("seed").get<uint64_t>();
    p.validate();
    return p;
}

inline nlohmann::json params_json(const AffineParams& p) {
    return {{"dx", p.dx}, {"dy", p.dy}, {"theta", p.theta}, {"zx", p.zx}, {"zy", p.zy}};
}

inline AffineParams params_from_json(const nlohmann::json& j) {
    AffineParams p;
    p.dx = j.at("dx").get<int64_t>();
    p.dy = j.at("dy").get<int64_t>();
    p.theta = j.at("theta").get<double>();
    p.zx = j.at("zx").get<double>();
    p.zy = j.at("zy").get<double>();
    return p;
}

/// Throws unless every field of `p` lies inside the policy's bounds for the
/// given image side. Applied both when manifests are written and re-read.
inline void check_params_in_policy(const AffineParams& p, const AffinePolicy& policy, int64_t side) {
    policy.validate();
    int64_t lo = policy.min_pixels(side), hi = policy.max_pixels(side);
    auto axis_ok = [&](int64_t d) {
        int64_t m = std::abs(d);
        return m == 0 || (m >= lo && m <= hi);
    };
    if (!axis_ok(p.dx) || !axis_ok(p.dy))
        throw std::runtime_error("affine params: translation outside the policy grid");
    if (hi > 0 && lo > 0 && p.dx == 0 && p.dy == 0)
        throw std::runtime_error("affine params: policy requires at least one translated axis");
    double r = policy.rotation_range_degrees;
    if (std::abs(p.theta) > r + 1e-9) throw std::runtime_error("affine params: rotation outside range");
    if (r > 0) {
        double k = (p.theta + r) / policy.rotation_step_degrees;
        if (std::abs(k - std::round(k)) > 1e-6) throw std::runtime_error("affine params: rotation off the grid");
    }
    if (!(p.zx >= policy.zoom_lo && p.zx <= policy.zoom_hi && p.zy >= policy.zoom_lo && p.zy <= policy.zoom_hi))
        throw std::runtime_error("affine params: zoom outside range");
}

/// Draw order is fixed (axis-count coin, axis pick, per-axis magnitude+sign,
/// rotation grid index, zx, zy) so a given rng state always yields the same
/// transform.
inline AffineParams sample_affine_params(const AffinePolicy& policy, int64_t side, Rng& rng) {
    policy.validate();
    int64_t lo = policy.min_pixels(side), hi = policy.max_pixels(side);
    if (hi < lo) throw std::invalid_argument("affine policy: empty translation grid for side " + std::to_string(side));

    AffineParams p;
    if (hi > 0) {
        bool both = rng.uniform_int(0, 1) == 1; // fair coin: one axis or two
        bool use_x = true, use_y = true;
        if (!both) {
            use_x = rng.uniform_int(0, 1) == 0;
            use_y = !use_x;
        }
        auto draw = [&]() {
            int64_t mag = rng.uniform_int(lo, hi);
            return rng.uniform_int(0, 1) == 1 ? mag : -mag;
        };
        if (use_x) p.dx = draw();
        if (use_y) p.dy = draw();
    }

    double r = policy.rotation_range_degrees;
    if (r > 0) {
        int64_t n = static_cast<int64_t>(std::floor(2 * r / policy.rotation_step_degrees)) + 1;
        p.theta = -r + static_cast<double>(rng.uniform_int(0, n - 1)) * policy.rotation_step_degrees;
        if (p.theta == 0) p.theta = 0.0; // normalize -0
    }

    p.zx = rng.uniform(policy.zoom_lo, policy.zoom_hi);
    p.zy = rng.uniform(policy.zoom_lo, policy.zoom_hi);
    return p;
}

/// Applies zoom, then rotation about the image center, then translation, via
/// the inverse map with bilinear sampling; out-of-frame regions read as 0.
/// Output is clipped to [0,1].
template <class T>
Tensor<T> apply_affine(const Tensor<T>& img, const AffineParams& p) {
    if (img.rank() != 3) throw std::invalid_argument("apply_affine: expected [H,W,C]");
    if (!(p.zx > 0) || !(p.zy > 0)) throw std::invalid_argument("apply_affine: zoom factors must be positive");
    int64_t h = img.dim(0), w = img.dim(1), ch = img.dim(2);
    double cx = (static_cast<double>(w) - 1) / 2, cy = (static_cast<double>(h) - 1) / 2;
    double rad = p.theta * M_PI / 180.0;
    double ct = std::cos(rad), st = std::sin(rad);

    Tensor<T> out({h, w, ch});
    for (int64_t yo = 0; yo < h; ++yo) {
        for (int64_t xo = 0; xo < w; ++xo) {
            double vx = static_cast<double>(xo) - cx - static_cast<double>(p.dx);
            double vy = static_cast<double>(yo) - cy - static_cast<double>(p.dy);
            double ux = (ct * vx + st * vy) / p.zx; // rotate back, then unzoom
            double uy = (-st * vx + ct * vy) / p.zy;
            double sx = ux + cx, sy = uy + cy;

            int64_t x0 = static_cast<int64_t>(std::floor(sx));
            int64_t y0 = static_cast<int64_t>(std::floor(sy));
            double wx = sx - static_cast<double>(x0), wy = sy - static_cast<double>(y0);
            auto at = [&](int64_t y, int64_t x, int64_t k) -> double {
                if (y < 0 || y >= h || x < 0 || x >= w) return 0.0; // black outside
                return static_cast<double>(img[(y * w + x) * ch + k]);
            };
            for (int64_t k = 0; k < ch; ++k) {
                double v = (1 - wy) * ((1 - wx) * at(y0, x0, k) + wx * at(y0, x0 + 1, k)) +
                           wy * ((1 - wx) * at(y0 + 1, x0, k) + wx * at(y0 + 1, x0 + 1, k));
                out[(yo * w + xo) * ch + k] = static_cast<T>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Whole-split generation and its on-disk form.
// ---------------------------------------------------------------------------

struct AffineDataset {
    DatasetSplit split;
    std::vector<AffineParams> params;
};

namespace detail {

inline Tensor<uint8_t> apply_affine_u8(const Tensor<uint8_t>& img, const AffineParams& p) {
    Tensor<double> f(img.shape());
    for (int64_t i = 0; i < img.numel(); ++i) f[i] = static_cast<double>(img[i]) / 255.0;
    Tensor<double> t = apply_affine(f, p);
    Tensor<uint8_t> out(t.shape());
    for (int64_t i = 0; i < t.numel(); ++i) out[i] = round_u8(t[i] * 255.0);
    return out;
}

template <class Fn>
DatasetSplit transform_split(const DatasetSplit& clean, Fn&& params_for) {
    Shape s = clean.images.shape();
    if (s[1] != s[2]) throw std::invalid_argument("affine generation: only square images are supported");
    DatasetSplit out;
    out.labels = clean.labels; // labels and count are never altered
    out.images = Tensor<uint8_t>(s);
    int64_t row = s[1] * s[2] * s[3];
    for (int64_t i = 0; i < s[0]; ++i) {
        Tensor<uint8_t> img({s[1], s[2], s[3]});
        std::copy(clean.images.data() + i * row, clean.images.data() + (i + 1) * row, img.data());
        Tensor<uint8_t> t = apply_affine_u8(img, params_for(i));
        std::copy(t.data(), t.data() + row, out.images.data() + i * row);
    }
    return out;
}

} // namespace detail

/// One transformed image per clean image; image i's parameters come from the
/// policy seed forked with i, so any subset can be regenerated independently.
inline AffineDataset generate_affine_split(const DatasetSplit& clean, const AffinePolicy& policy) {
    policy.validate();
    int64_t side = clean.images.dim(1);
    Rng root(policy.seed);
    AffineDataset out;
    out.params.resize(static_cast<size_t>(clean.size()));
    for (int64_t i = 0; i < clean.size(); ++i) {
        Rng r = root.fork(static_cast<uint64_t>(i));
        out.params[static_cast<size_t>(i)] = sample_affine_params(policy, side, r);
        check_params_in_policy(out.params[static_cast<size_t>(i)], policy, side);
    }
    out.split = detail::transform_split(clean, [&](int64_t i) { return out.params[static_cast<size_t>(i)]; });
    return out;
}

/// Reads the clean container's split, writes the transformed container under
/// out_root/<name> with a manifest holding the policy, the per-image params
/// and the source hash. Returns skipped=true when the same generation already
/// exists there.
inline IngestResult generate_affine_dataset(const std::string& clean_dir, const std::string& split,
                                            const std::string& out_root, const std::string& name,
                                            const AffinePolicy& policy) {
    namespace fs = std::filesystem;
    policy.validate();
    nlohmann::json clean_manifest = read_dataset_manifest(clean_dir);
    std::string split_file = detail::split_path(clean_dir, split);
    std::vector<std::pair<std::string, std::string>> sources{
        {clean_manifest["name"].get<std::string>() + "/" + split, file_hash_hex(split_file)}};

    std::string dir = (fs::path(out_root) / name).string();
    if (container_matches_sources(dir, sources)) {
        nlohmann::json existing = read_dataset_manifest(dir);
        if (existing.contains("affine") && existing["affine"]["policy"] == policy_json(policy))
            return {dir, true, existing};
    }

    DatasetSplit clean = load_split_raw(clean_dir, split);
    AffineDataset gen = generate_affine_split(clean, policy);

    int num_classes = clean_manifest["num_classes"].get<int>();
    nlohmann::json per_image = nlohmann::json::array();
    for (const auto& p : gen.params) per_image.push_back(params_json(p));
    write_dataset_container(dir, name, {{split, std::move(gen.split)}}, num_classes, sources,
                            {{"kind", "affine-generated"}});

    nlohmann::json m = read_dataset_manifest(dir);
    m["affine"] = {{"policy", policy_json(policy)}, {"params", std::move(per_image)}, {"split", split}};
    write_text_file_atomic((fs::path(dir) / "manifest.json").string(), m.dump(2) + "\n");
    return {dir, false, m};
}

/// Loads the manifest of a generated container, re-validating every recorded
/// transform against the recorded policy (range enforcement on read).
inline std::pair<AffinePolicy, std::vector<AffineParams>> read_affine_manifest(const std::string& dir) {
    nlohmann::json m = read_dataset_manifest(dir);
    if (!m.contains("affine")) throw std::runtime_error("affine manifest: container was not affine-generated");
    AffinePolicy policy = policy_from_json(m["affine"]["policy"]);
    int64_t side = m["geometry"]["height"].get<int64_t>();
    std::vector<AffineParams> params;
    for (const auto& j : m["affine"]["params"]) {
        AffineParams p = params_from_json(j);
        check_params_in_policy(p, policy, side);
        params.push_back(p);
    }
    return {policy, params};
}

/// Rebuilds the transformed split from the clean split plus recorded params;
/// bit-exact with respect to the original generation.
inline DatasetSplit regenerate_affine_split(const DatasetSplit& clean, const std::vector<AffineParams>& params) {
    if (static_cast<size_t>(clean.size()) != params.size())
        throw std::invalid_argument("affine regeneration: image/param count mismatch");
    return detail::transform_split(clean, [&](int64_t i) { return params[static_cast<size_t>(i)]; });
}

} // namespace robcaps
