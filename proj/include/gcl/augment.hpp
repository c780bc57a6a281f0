#pragma once

// Seeded image transformations and contrastive view generation.
//
// A policy is an ordered list of transforms. Each transform draws its random
// parameters from its own seed, so a view is a pure function of
// (image, policy, seed).

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gcl/image_ops.hpp"

namespace gcl {

enum class PolicyKind { crop_rotate, simclr_suite };

std::string_view to_string(PolicyKind k) noexcept;
PolicyKind parse_policy_kind(std::string_view name);

enum class TransformId { resized_crop, rotate, hflip, color_jitter, grayscale, blur };

std::string_view to_string(TransformId t) noexcept;

struct TransformPolicy {
    PolicyKind kind = PolicyKind::simclr_suite;
    double crop_scale_min = 0.08;
    double crop_scale_max = 1.0;
    double crop_ratio_min = 3.0 / 4.0;
    double crop_ratio_max = 4.0 / 3.0;
    double rotation_degrees = 180.0; // crop_rotate: largest quarter turn allowed
    double flip_prob = 0.5;
    double jitter_prob = 0.8;
    double brightness = 0.8;
    double contrast = 0.8;
    double saturation = 0.8;
    double hue = 0.2;
    double grayscale_prob = 0.2;
    double blur_prob = 0.5;
    double blur_sigma_min = 0.1;
    double blur_sigma_max = 2.0;
    std::size_t views_per_set = 2;

    // crop scale [0.6, 1], square crops, quarter-turn rotations.
    static TransformPolicy crop_rotate();
    static TransformPolicy simclr_suite();

    std::vector<TransformId> transforms() const;
    bool contains(TransformId t) const;
    void validate() const;
};

nlohmann::json to_json(const TransformPolicy& policy);
TransformPolicy transform_policy_from_json(const nlohmann::json& j);

// A fully parameterized transform instance.
struct Transform {
    TransformId id = TransformId::hflip;
    bool active = true;
    // resized_crop: window in pixel units
    double y0 = 0, x0 = 0, h = 0, w = 0;
    double degrees = 0; // rotate, counter-clockwise
    double brightness = 1, contrast = 1, saturation = 1, hue = 0;
    double sigma = 0;
    std::size_t radius = 0;
};

// Draws the random parameters of transform `t` for an image of `shape`.
Transform sample_transform(const TransformPolicy& policy, TransformId t, const ImageShape& shape, std::uint64_t seed);

// Applies a parameterized transform; output has the input shape.
std::vector<double> apply(const Transform& t, std::span<const double> image, const ImageShape& shape);

// sample_transform + apply. Throws ConfigError when t is not in the policy.
std::vector<double> apply_transform(std::span<const double> image, const ImageShape& shape,
                                    const TransformPolicy& policy, TransformId t, std::uint64_t seed);

// Runs the whole policy; transform k uses seed hash(view_seed, k).
std::vector<double> make_view(std::span<const double> image, const ImageShape& shape, const TransformPolicy& policy,
                              std::uint64_t view_seed);

// Seed of view v of sample `sample_id` at `step`.
std::uint64_t view_seed(std::uint64_t seed, std::uint64_t step, std::uint64_t sample_id, std::uint64_t view);

struct ContrastiveViews {
    std::vector<std::vector<double>> positives;
    std::vector<std::vector<double>> negatives;
    // Sample id each view was generated from.
    std::vector<std::uint64_t> positive_sources;
    std::vector<std::uint64_t> negative_sources;
};

// X+ = views of the anchor, X- = views of the other sample. Ids name the
// samples in the combined training pool and feed the seed derivation.
// Throws ContractError when anchor_id == other_id.
ContrastiveViews generate_contrastive_sets(std::span<const double> anchor, std::uint64_t anchor_id,
                                           std::span<const double> other, std::uint64_t other_id,
                                           const ImageShape& shape, const TransformPolicy& policy,
                                           std::uint64_t seed, std::uint64_t step);

} // namespace gcl
