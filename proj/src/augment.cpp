#include "gcl/augment.hpp"

#include <algorithm>
#include <cmath>

#include "gcl/errors.hpp"
#include "gcl/rng.hpp"

namespace gcl {

std::string_view to_string(PolicyKind k) noexcept {
    return k == PolicyKind::crop_rotate ? "crop_rotate" : "simclr_suite";
}

PolicyKind parse_policy_kind(std::string_view name) {
    if (name == "crop_rotate") return PolicyKind::crop_rotate;
    if (name == "simclr_suite") return PolicyKind::simclr_suite;
    throw ConfigError("unknown augmentation kind '" + std::string(name) + "' (expected crop_rotate or simclr_suite)");
}

std::string_view to_string(TransformId t) noexcept {
    switch (t) {
    case TransformId::resized_crop: return "resized_crop";
    case TransformId::rotate: return "rotate";
    case TransformId::hflip: return "hflip";
    case TransformId::color_jitter: return "color_jitter";
    case TransformId::grayscale: return "grayscale";
    case TransformId::blur: return "blur";
    }
    return "?";
}

TransformPolicy TransformPolicy::crop_rotate() {
    TransformPolicy p;
    p.kind = PolicyKind::crop_rotate;
    p.crop_scale_min = 0.6;
    p.crop_scale_max = 1.0;
    p.crop_ratio_min = 1.0;
    p.crop_ratio_max = 1.0;
    return p;
}

TransformPolicy TransformPolicy::simclr_suite() { return {}; }

std::vector<TransformId> TransformPolicy::transforms() const {
    if (kind == PolicyKind::crop_rotate) return {TransformId::resized_crop, TransformId::rotate};
    return {TransformId::resized_crop, TransformId::hflip, TransformId::color_jitter, TransformId::grayscale,
            TransformId::blur};
}

bool TransformPolicy::contains(TransformId t) const {
    const auto ts = transforms();
    return std::find(ts.begin(), ts.end(), t) != ts.end();
}

void TransformPolicy::validate() const {
    if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0))
        throw ConfigError("augmentation crop scale range must satisfy 0 < min <= max <= 1");
    if (!(crop_ratio_min > 0.0 && crop_ratio_min <= crop_ratio_max))
        throw ConfigError("augmentation crop ratio range must satisfy 0 < min <= max");
    if (!(rotation_degrees >= 0.0 && rotation_degrees <= 180.0))
        throw ConfigError("augmentation rotation_degrees must lie in [0, 180]");
    for (double p : {flip_prob, jitter_prob, grayscale_prob, blur_prob})
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("augmentation probabilities must lie in [0, 1]");
    for (double s : {brightness, contrast, saturation})
        if (!(s >= 0.0 && s <= 1.0)) throw ConfigError("brightness/contrast/saturation strengths must lie in [0, 1]");
    if (!(hue >= 0.0 && hue <= 0.5)) throw ConfigError("hue strength must lie in [0, 0.5]");
    if (!(blur_sigma_min > 0.0 && blur_sigma_min <= blur_sigma_max))
        throw ConfigError("blur sigma range must satisfy 0 < min <= max");
    if (views_per_set == 0) throw ConfigError("views_per_set must be >= 1");
}

nlohmann::json to_json(const TransformPolicy& p) {
    return {{"kind", std::string(to_string(p.kind))},
            {"crop_scale_min", p.crop_scale_min},
            {"crop_scale_max", p.crop_scale_max},
            {"crop_ratio_min", p.crop_ratio_min},
            {"crop_ratio_max", p.crop_ratio_max},
            {"rotation_degrees", p.rotation_degrees},
            {"flip_prob", p.flip_prob},
            {"jitter_prob", p.jitter_prob},
            {"brightness", p.brightness},
            {"contrast", p.contrast},
            {"saturation", p.saturation},
            {"hue", p.hue},
            {"grayscale_prob", p.grayscale_prob},
            {"blur_prob", p.blur_prob},
            {"blur_sigma_min", p.blur_sigma_min},
            {"blur_sigma_max", p.blur_sigma_max},
            {"views_per_set", p.views_per_set}};
}

TransformPolicy transform_policy_from_json(const nlohmann::json& j) {
    TransformPolicy p = parse_policy_kind(j.at("kind").get<std::string>()) == PolicyKind::crop_rotate
                            ? TransformPolicy::crop_rotate()
                            : TransformPolicy::simclr_suite();
    auto get = [&](const char* key, double& field) {
        if (j.contains(key)) field = j.at(key).get<double>();
    };
    get("crop_scale_min", p.crop_scale_min);
    get("crop_scale_max", p.crop_scale_max);
    get("crop_ratio_min", p.crop_ratio_min);
    get("crop_ratio_max", p.crop_ratio_max);
    get("rotation_degrees", p.rotation_degrees);
    get("flip_prob", p.flip_prob);
    get("jitter_prob", p.jitter_prob);
    get("brightness", p.brightness);
    get("contrast", p.contrast);
    get("saturation", p.saturation);
    get("hue", p.hue);
    get("grayscale_prob", p.grayscale_prob);
    get("blur_prob", p.blur_prob);
    get("blur_sigma_min", p.blur_sigma_min);
    get("blur_sigma_max", p.blur_sigma_max);
    if (j.contains("views_per_set")) p.views_per_set = j.at("views_per_set").get<std::size_t>();
    p.validate();
    return p;
}

Transform sample_transform(const TransformPolicy& policy, TransformId id, const ImageShape& shape,
                           std::uint64_t seed) {
    if (!policy.contains(id))
        throw ConfigError("transform " + std::string(to_string(id)) + " is not part of the " +
                          std::string(to_string(policy.kind)) + " policy");
    Rng rng(seed);
    Transform t;
    t.id = id;
    const double H = static_cast<double>(shape[1]);
    const double W = static_cast<double>(shape[2]);
    switch (id) {
    case TransformId::resized_crop: {
        const double scale = rng.uniform(policy.crop_scale_min, policy.crop_scale_max);
        const double log_ratio = rng.uniform(std::log(policy.crop_ratio_min), std::log(policy.crop_ratio_max));
        const double ratio = std::exp(log_ratio);
        const double area = scale * H * W;
        t.w = std::min(W, std::sqrt(area * ratio));
        t.h = std::min(H, std::sqrt(area / ratio));
        t.y0 = rng.uniform(0.0, H - t.h);
        t.x0 = rng.uniform(0.0, W - t.w);
        break;
    }
    case TransformId::rotate: {
        std::vector<int> turns;
        for (int k = 0; k < 4; ++k)
            if (std::min(90 * k, 360 - 90 * k) <= policy.rotation_degrees) turns.push_back(k);
        t.degrees = 90.0 * turns[rng.below(turns.size())];
        break;
    }
    case TransformId::hflip: t.active = rng.bernoulli(policy.flip_prob); break;
    case TransformId::color_jitter:
        t.active = rng.bernoulli(policy.jitter_prob);
        t.brightness = rng.uniform(1.0 - policy.brightness, 1.0 + policy.brightness);
        t.contrast = rng.uniform(1.0 - policy.contrast, 1.0 + policy.contrast);
        t.saturation = rng.uniform(1.0 - policy.saturation, 1.0 + policy.saturation);
        t.hue = rng.uniform(-policy.hue, policy.hue);
        break;
    case TransformId::grayscale: t.active = rng.bernoulli(policy.grayscale_prob); break;
    case TransformId::blur:
        t.active = rng.bernoulli(policy.blur_prob);
        t.sigma = rng.uniform(policy.blur_sigma_min, policy.blur_sigma_max);
        t.radius = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::lround(0.05 * static_cast<double>(std::min(shape[1], shape[2])))));
        break;
    }
    return t;
}

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    const double d = mx - mn;
    v = mx;
    s = mx > 0.0 ? d / mx : 0.0;
    if (d == 0.0) h = 0.0;
    else if (mx == r) h = std::fmod((g - b) / d + 6.0, 6.0) / 6.0;
    else if (mx == g) h = ((b - r) / d + 2.0) / 6.0;
    else h = ((r - g) / d + 4.0) / 6.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
    const double hh = h * 6.0;
    const int sector = static_cast<int>(std::floor(hh)) % 6;
    const double f = hh - std::floor(hh);
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - s * f);
    const double u = v * (1.0 - s * (1.0 - f));
    switch (sector) {
    case 0: r = v, g = u, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = u; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = u, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
    }
}

std::vector<double> luma(std::span<const double> image, const ImageShape& shape) {
    const std::size_t n = shape[1] * shape[2];
    std::vector<double> y(n);
    if (shape[0] == 3) {
        for (std::size_t i = 0; i < n; ++i)
            y[i] = 0.299 * image[i] + 0.587 * image[n + i] + 0.114 * image[2 * n + i];
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t c = 0; c < shape[0]; ++c) acc += image[c * n + i];
            y[i] = acc / static_cast<double>(shape[0]);
        }
    }
    return y;
}

std::vector<double> color_jitter(const Transform& t, std::span<const double> image, const ImageShape& shape) {
    std::vector<double> out(image.begin(), image.end());
    const std::size_t n = shape[1] * shape[2];
    for (auto& v : out) v = clamp01(v * t.brightness);
    {
        const auto y = luma(out, shape);
        double mean = 0.0;
        for (double v : y) mean += v;
        mean /= static_cast<double>(n);
        for (auto& v : out) v = clamp01((v - mean) * t.contrast + mean);
    }
    if (shape[0] == 3) {
        const auto y = luma(out, shape);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < n; ++i)
                out[c * n + i] = clamp01((out[c * n + i] - y[i]) * t.saturation + y[i]);
        for (std::size_t i = 0; i < n; ++i) {
            double h, s, v;
            rgb_to_hsv(out[i], out[n + i], out[2 * n + i], h, s, v);
            h = std::fmod(h + t.hue + 1.0, 1.0);
            hsv_to_rgb(h, s, v, out[i], out[n + i], out[2 * n + i]);
        }
    }
    return out;
}

std::vector<double> gaussian_blur(const Transform& t, std::span<const double> image, const ImageShape& shape) {
    const auto [c, h, w] = shape;
    const int r = static_cast<int>(t.radius);
    std::vector<double> k(2 * t.radius + 1);
    double norm = 0.0;
    for (int i = -r; i <= r; ++i) {
        k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (t.sigma * t.sigma));
        norm += k[static_cast<std::size_t>(i + r)];
    }
    for (auto& v : k) v /= norm;
    auto clampi = [](int v, std::size_t n) { return static_cast<std::size_t>(std::clamp(v, 0, static_cast<int>(n) - 1)); };
    std::vector<double> tmp(image.size());
    std::vector<double> out(image.size());
    for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t base = ch * h * w;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int i = -r; i <= r; ++i)
                    acc += k[static_cast<std::size_t>(i + r)] * image[base + y * w + clampi(static_cast<int>(x) + i, w)];
                tmp[base + y * w + x] = acc;
            }
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int i = -r; i <= r; ++i)
                    acc += k[static_cast<std::size_t>(i + r)] * tmp[base + clampi(static_cast<int>(y) + i, h) * w + x];
                out[base + y * w + x] = acc;
            }
    }
    return out;
}

} // namespace

std::vector<double> apply(const Transform& t, std::span<const double> image, const ImageShape& shape) {
    if (image.size() != shape[0] * shape[1] * shape[2]) throw ContractError("image size does not match its shape");
    if (!t.active) return {image.begin(), image.end()};
    switch (t.id) {
    case TransformId::resized_crop: return crop_resize(image, shape, t.y0, t.x0, t.h, t.w, shape[1], shape[2]);
    case TransformId::rotate: return rotate_degrees(image, shape, t.degrees);
    case TransformId::hflip: return flip_horizontal(image, shape);
    case TransformId::color_jitter: return color_jitter(t, image, shape);
    case TransformId::grayscale: {
        const auto y = luma(image, shape);
        std::vector<double> out(image.size());
        for (std::size_t c = 0; c < shape[0]; ++c) std::copy(y.begin(), y.end(), out.begin() + static_cast<std::ptrdiff_t>(c * y.size()));
        return out;
    }
    case TransformId::blur: return gaussian_blur(t, image, shape);
    }
    return {image.begin(), image.end()};
}

std::vector<double> apply_transform(std::span<const double> image, const ImageShape& shape,
                                    const TransformPolicy& policy, TransformId t, std::uint64_t seed) {
    return apply(sample_transform(policy, t, shape, seed), image, shape);
}

std::vector<double> make_view(std::span<const double> image, const ImageShape& shape, const TransformPolicy& policy,
                              std::uint64_t seed) {
    std::vector<double> cur(image.begin(), image.end());
    const auto ts = policy.transforms();
    for (std::size_t k = 0; k < ts.size(); ++k) cur = apply_transform(cur, shape, policy, ts[k], hash_seed({seed, k}));
    return cur;
}

std::uint64_t view_seed(std::uint64_t seed, std::uint64_t step, std::uint64_t sample_id, std::uint64_t view) {
    return hash_seed({seed, step, sample_id, view});
}

ContrastiveViews generate_contrastive_sets(std::span<const double> anchor, std::uint64_t anchor_id,
                                           std::span<const double> other, std::uint64_t other_id,
                                           const ImageShape& shape, const TransformPolicy& policy,
                                           std::uint64_t seed, std::uint64_t step) {
    if (anchor_id == other_id)
        throw ContractError("negative views must come from a different sample than the anchor (both are sample " +
                            std::to_string(anchor_id) + ")");
    policy.validate();
    ContrastiveViews out;
    for (std::size_t v = 0; v < policy.views_per_set; ++v) {
        out.positives.push_back(make_view(anchor, shape, policy, view_seed(seed, step, anchor_id, v)));
        out.positive_sources.push_back(anchor_id);
        out.negatives.push_back(make_view(other, shape, policy, view_seed(seed, step, other_id, v)));
        out.negative_sources.push_back(other_id);
    }
    return out;
}

} // namespace gcl
