#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gcl/image_ops.hpp"

namespace gcl {

enum class Split { train, val, test };

std::string_view to_string(Split s) noexcept;

// A labelled image set from one domain. Images are stored contiguously,
// planar [C,H,W] each, with pixel values in [0,1].
struct DomainDataset {
    ImageShape image_shape{1, 16, 16};
    std::vector<double> pixels;
    std::vector<std::size_t> labels;
    std::size_t num_classes = 0;
    std::string domain_tag;
    Split split = Split::train;
    std::vector<std::string> class_names; // optional; index = class id

    std::size_t size() const noexcept { return labels.size(); }
    bool empty() const noexcept { return labels.empty(); }
    std::size_t image_size() const noexcept { return image_shape[0] * image_shape[1] * image_shape[2]; }
    std::span<const double> image(std::size_t i) const;

    // Sample indices per class, ascending.
    std::vector<std::vector<std::size_t>> indices_by_class() const;
    DomainDataset subset(std::span<const std::size_t> indices) const;
    void push_back(std::span<const double> image, std::size_t label);

    // Throws DataError when sizes disagree, labels exceed num_classes or a
    // pixel falls outside [0,1].
    void validate() const;
};

// IDX container (MNIST/USPS style): big-endian dims, unsigned-byte payload.
DomainDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

// root/<class_name>/<image files>. Classes sorted lexicographically map to
// ids 0..N-1; files within a class are read in sorted order. Images are
// converted to `shape[0]` channels and resized bilinearly to shape.
DomainDataset load_image_folder(const std::filesystem::path& root, const ImageShape& shape);

// Bilinear resize of every image.
DomainDataset resize(const DomainDataset& ds, std::size_t height, std::size_t width);

// Picks exactly `shots_per_class` samples per class (seeded, without
// replacement). Returns (few_shot_train, remainder); both keep the original
// relative order.
std::pair<DomainDataset, DomainDataset> few_shot_split(const DomainDataset& ds, std::size_t shots_per_class,
                                                       std::uint64_t seed);

// Seeded split of a dataset into two disjoint halves per class; the first
// receives round(fraction * class size) samples of each class.
std::pair<DomainDataset, DomainDataset> stratified_split(const DomainDataset& ds, double fraction, std::uint64_t seed);

enum class DomainShift { invert, rotate90, noise };

std::string_view to_string(DomainShift s) noexcept;
DomainShift parse_domain_shift(std::string_view name);

struct SynthSpec {
    std::size_t n_classes = 4;
    std::size_t samples_per_class = 200;
    DomainShift shift = DomainShift::invert;
    double sigma = 0.0; // noise shift only
    std::uint64_t seed = 0;

    void validate() const;
};

nlohmann::json to_json(const SynthSpec& spec);

// Fixed per-class 16x16 binary glyph templates.
std::vector<std::vector<double>> glyph_templates(std::size_t n_classes, std::uint64_t seed);

// Applies a domain shift to one 1x16x16 image.
std::vector<double> apply_shift(std::span<const double> image, const ImageShape& shape, DomainShift shift,
                                double sigma, std::uint64_t seed);

// Source: glyph templates with +-2 px translation jitter and Bernoulli(0.05)
// pixel flips. Target: the same generative process (independent draws)
// followed by the domain shift.
std::pair<DomainDataset, DomainDataset> synth_two_domain(const SynthSpec& spec);

} // namespace gcl
