#include "gcl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "gcl/errors.hpp"
#include "gcl/rng.hpp"

namespace gcl {

namespace fs = std::filesystem;

std::string_view to_string(Split s) noexcept {
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    return "train";
}

std::span<const double> DomainDataset::image(std::size_t i) const {
    if (i >= size()) throw ContractError("sample index " + std::to_string(i) + " out of range");
    return std::span<const double>(pixels).subspan(i * image_size(), image_size());
}

std::vector<std::vector<std::size_t>> DomainDataset::indices_by_class() const {
    std::vector<std::vector<std::size_t>> out(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) out.at(labels[i]).push_back(i);
    return out;
}

DomainDataset DomainDataset::subset(std::span<const std::size_t> indices) const {
    DomainDataset out;
    out.image_shape = image_shape;
    out.num_classes = num_classes;
    out.domain_tag = domain_tag;
    out.split = split;
    out.class_names = class_names;
    out.pixels.reserve(indices.size() * image_size());
    out.labels.reserve(indices.size());
    for (auto i : indices) out.push_back(image(i), labels[i]);
    return out;
}

void DomainDataset::push_back(std::span<const double> image, std::size_t label) {
    if (image.size() != image_size()) throw ContractError("image size does not match dataset shape");
    pixels.insert(pixels.end(), image.begin(), image.end());
    labels.push_back(label);
}

void DomainDataset::validate() const {
    if (pixels.size() != labels.size() * image_size())
        throw DataError(domain_tag + ": " + std::to_string(labels.size()) + " labels but pixel buffer holds " +
                        std::to_string(pixels.size()) + " values");
    for (auto l : labels)
        if (l >= num_classes)
            throw DataError(domain_tag + ": label " + std::to_string(l) + " outside 0.." +
                            std::to_string(num_classes - 1));
    for (double p : pixels)
        if (!(p >= 0.0 && p <= 1.0)) throw DataError(domain_tag + ": pixel value outside [0,1]");
}

// ---------------------------------------------------------------------------
// IDX

namespace {

std::vector<unsigned char> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct IdxHeader {
    std::vector<std::size_t> dims;
    std::size_t payload_offset;
};

IdxHeader parse_idx_header(const std::vector<unsigned char>& bytes, const fs::path& path) {
    if (bytes.size() < 4) throw FormatError(path.string() + ": truncated magic at offset 0");
    if (bytes[0] != 0 || bytes[1] != 0)
        throw FormatError(path.string() + ": magic mismatch at offset 0 (expected two zero bytes)");
    if (bytes[2] != 0x08)
        throw FormatError(path.string() + ": unsupported element type 0x" + std::to_string(bytes[2]) +
                          " at offset 2 (only unsigned byte is supported)");
    const std::size_t ndims = bytes[3];
    if (ndims == 0) throw FormatError(path.string() + ": zero dimensions at offset 3");
    IdxHeader h;
    h.payload_offset = 4 + 4 * ndims;
    if (bytes.size() < h.payload_offset)
        throw FormatError(path.string() + ": truncated dimension table at offset " + std::to_string(bytes.size()));
    for (std::size_t d = 0; d < ndims; ++d) {
        const std::size_t o = 4 + 4 * d;
        h.dims.push_back((std::size_t{bytes[o]} << 24) | (std::size_t{bytes[o + 1]} << 16) |
                         (std::size_t{bytes[o + 2]} << 8) | std::size_t{bytes[o + 3]});
    }
    std::size_t expected = 1;
    for (auto d : h.dims) expected *= d;
    if (bytes.size() < h.payload_offset + expected)
        throw FormatError(path.string() + ": truncated payload at offset " + std::to_string(bytes.size()) +
                          " (expected " + std::to_string(h.payload_offset + expected) + " bytes)");
    if (bytes.size() > h.payload_offset + expected)
        throw FormatError(path.string() + ": trailing bytes after payload at offset " +
                          std::to_string(h.payload_offset + expected));
    return h;
}

} // namespace

DomainDataset load_idx(const fs::path& images, const fs::path& labels) {
    const auto img_bytes = read_file(images);
    const auto lab_bytes = read_file(labels);
    const auto ih = parse_idx_header(img_bytes, images);
    const auto lh = parse_idx_header(lab_bytes, labels);
    if (ih.dims.size() != 3 && ih.dims.size() != 4)
        throw FormatError(images.string() + ": image file must have 3 or 4 dimensions, found " +
                          std::to_string(ih.dims.size()) + " at offset 3");
    if (lh.dims.size() != 1)
        throw FormatError(labels.string() + ": label file must have 1 dimension, found " +
                          std::to_string(lh.dims.size()) + " at offset 3");
    const std::size_t count = ih.dims[0];
    if (lh.dims[0] != count)
        throw FormatError(labels.string() + ": " + std::to_string(lh.dims[0]) + " labels for " +
                          std::to_string(count) + " images (count at offset 4)");

    DomainDataset ds;
    // 3 dims: n x rows x cols (one channel); 4 dims: n x channels x rows x cols.
    ds.image_shape = ih.dims.size() == 3 ? ImageShape{1, ih.dims[1], ih.dims[2]}
                                         : ImageShape{ih.dims[1], ih.dims[2], ih.dims[3]};
    ds.domain_tag = images.stem().string();
    ds.pixels.resize(count * ds.image_size());
    for (std::size_t i = 0; i < ds.pixels.size(); ++i)
        ds.pixels[i] = static_cast<double>(img_bytes[ih.payload_offset + i]) / 255.0;
    ds.labels.resize(count);
    std::size_t max_label = 0;
    for (std::size_t i = 0; i < count; ++i) {
        ds.labels[i] = lab_bytes[lh.payload_offset + i];
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.num_classes = count == 0 ? 0 : max_label + 1;
    return ds;
}

// ---------------------------------------------------------------------------
// Image folders

DomainDataset load_image_folder(const fs::path& root, const ImageShape& shape) {
    if (!fs::is_directory(root)) throw DataError(root.string() + " is not a directory");
    if (shape[0] != 1 && shape[0] != 3) throw ConfigError("image folders support 1 or 3 channels");
    std::vector<fs::path> class_dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory() && e.path().filename().string().front() != '.') class_dirs.push_back(e.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) throw DataError(root.string() + " contains no class folders");

    DomainDataset ds;
    ds.image_shape = shape;
    ds.num_classes = class_dirs.size();
    ds.domain_tag = root.filename().string();
    for (std::size_t c = 0; c < class_dirs.size(); ++c) {
        ds.class_names.push_back(class_dirs[c].filename().string());
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(class_dirs[c]))
            if (e.is_regular_file() && e.path().filename().string().front() != '.') files.push_back(e.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw DataError("class folder " + class_dirs[c].string() + " is empty");
        for (const auto& f : files) {
            cv::Mat img = cv::imread(f.string(), shape[0] == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
            if (img.empty()) throw DataError("cannot decode image " + f.string());
            if (shape[0] == 3) cv::cvtColor(img, img, cv::COLOR_BGR2RGB);
            const double scale = img.depth() == CV_16U ? 65535.0 : 255.0;
            cv::Mat as_double;
            img.convertTo(as_double, CV_64F, 1.0 / scale);
            const ImageShape native{shape[0], static_cast<std::size_t>(img.rows), static_cast<std::size_t>(img.cols)};
            std::vector<double> planar(native[0] * native[1] * native[2]);
            for (std::size_t y = 0; y < native[1]; ++y)
                for (std::size_t x = 0; x < native[2]; ++x)
                    for (std::size_t ch = 0; ch < native[0]; ++ch)
                        planar[(ch * native[1] + y) * native[2] + x] =
                            as_double.ptr<double>(static_cast<int>(y))[x * native[0] + ch];
            ds.push_back(resize_bilinear(planar, native, shape[1], shape[2]), c);
        }
    }
    return ds;
}

DomainDataset resize(const DomainDataset& ds, std::size_t height, std::size_t width) {
    DomainDataset out = ds;
    out.image_shape = {ds.image_shape[0], height, width};
    out.pixels.clear();
    out.labels.clear();
    for (std::size_t i = 0; i < ds.size(); ++i)
        out.push_back(resize_bilinear(ds.image(i), ds.image_shape, height, width), ds.labels[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Splits

std::pair<DomainDataset, DomainDataset> few_shot_split(const DomainDataset& ds, std::size_t shots_per_class,
                                                       std::uint64_t seed) {
    const auto by_class = ds.indices_by_class();
    std::vector<std::size_t> chosen;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        if (by_class[c].size() < shots_per_class)
            throw DataError(ds.domain_tag + ": class " + std::to_string(c) + " has " +
                            std::to_string(by_class[c].size()) + " samples, " + std::to_string(shots_per_class) +
                            " shots requested");
        auto pool = by_class[c];
        Rng rng(hash_seed({seed, c}));
        shuffle(pool, rng);
        chosen.insert(chosen.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(shots_per_class));
    }
    std::sort(chosen.begin(), chosen.end());
    std::vector<std::size_t> rest;
    std::vector<bool> taken(ds.size(), false);
    for (auto i : chosen) taken[i] = true;
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (!taken[i]) rest.push_back(i);
    auto train = ds.subset(chosen);
    train.split = Split::train;
    auto remainder = ds.subset(rest);
    remainder.split = Split::test;
    return {std::move(train), std::move(remainder)};
}

std::pair<DomainDataset, DomainDataset> stratified_split(const DomainDataset& ds, double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("split fraction must lie in [0,1]");
    const auto by_class = ds.indices_by_class();
    std::vector<std::size_t> first;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto pool = by_class[c];
        Rng rng(hash_seed({seed, c, 0x5b11u}));
        shuffle(pool, rng);
        const auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(pool.size())));
        first.insert(first.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n));
    }
    std::sort(first.begin(), first.end());
    std::vector<bool> taken(ds.size(), false);
    for (auto i : first) taken[i] = true;
    std::vector<std::size_t> second;
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (!taken[i]) second.push_back(i);
    return {ds.subset(first), ds.subset(second)};
}

// ---------------------------------------------------------------------------
// Synthetic two-domain task

std::string_view to_string(DomainShift s) noexcept {
    switch (s) {
    case DomainShift::invert: return "invert";
    case DomainShift::rotate90: return "rotate90";
    case DomainShift::noise: return "noise";
    }
    return "invert";
}

DomainShift parse_domain_shift(std::string_view name) {
    if (name == "invert") return DomainShift::invert;
    if (name == "rotate90") return DomainShift::rotate90;
    if (name == "noise") return DomainShift::noise;
    throw ConfigError("unknown domain shift '" + std::string(name) + "' (expected invert, rotate90 or noise)");
}

void SynthSpec::validate() const {
    if (n_classes < 2) throw ConfigError("synthetic task needs n_classes >= 2");
    if (samples_per_class == 0) throw ConfigError("synthetic task needs samples_per_class >= 1");
    if (sigma < 0.0) throw ConfigError("noise sigma must be >= 0");
}

nlohmann::json to_json(const SynthSpec& spec) {
    return {{"n_classes", spec.n_classes},
            {"samples_per_class", spec.samples_per_class},
            {"shift", std::string(to_string(spec.shift))},
            {"sigma", spec.sigma},
            {"seed", spec.seed}};
}

namespace {

constexpr std::size_t kGlyph = 16;
constexpr int kMargin = 2;
constexpr double kFlipProb = 0.05;

std::vector<double> draw_glyph(Rng& rng) {
    std::vector<double> g(kGlyph * kGlyph, 0.0);
    constexpr int dirs[8][2] = {{0, 1}, {1, 0}, {1, 1}, {1, -1}, {0, -1}, {-1, 0}, {-1, -1}, {-1, 1}};
    const int lo = kMargin;
    const int hi = static_cast<int>(kGlyph) - 1 - kMargin;
    for (int stroke = 0; stroke < 3; ++stroke) {
        int y = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
        int x = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
        const auto* d = dirs[rng.below(8)];
        const int length = 4 + static_cast<int>(rng.below(7));
        for (int s = 0; s < length; ++s) {
            g[static_cast<std::size_t>(y) * kGlyph + static_cast<std::size_t>(x)] = 1.0;
            const int ny = y + d[0];
            const int nx = x + d[1];
            if (ny < lo || ny > hi || nx < lo || nx > hi) break;
            y = ny;
            x = nx;
        }
    }
    return g;
}

std::size_t hamming(const std::vector<double>& a, const std::vector<double>& b) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) n += a[i] != b[i];
    return n;
}

std::vector<double> render_sample(const std::vector<double>& glyph, Rng& rng) {
    const int dy = static_cast<int>(rng.below(5)) - 2;
    const int dx = static_cast<int>(rng.below(5)) - 2;
    std::vector<double> img(kGlyph * kGlyph, 0.0);
    const int n = static_cast<int>(kGlyph);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const int sy = y - dy;
            const int sx = x - dx;
            if (sy >= 0 && sy < n && sx >= 0 && sx < n)
                img[static_cast<std::size_t>(y * n + x)] = glyph[static_cast<std::size_t>(sy * n + sx)];
        }
    for (auto& p : img)
        if (rng.bernoulli(kFlipProb)) p = 1.0 - p;
    return img;
}

} // namespace

std::vector<std::vector<double>> glyph_templates(std::size_t n_classes, std::uint64_t seed) {
    std::vector<std::vector<double>> templates;
    Rng rng(hash_seed({seed, 0x61796c67u}));
    while (templates.size() < n_classes) {
        auto g = draw_glyph(rng);
        bool distinct = true;
        for (const auto& t : templates) distinct = distinct && hamming(g, t) >= 12;
        if (distinct) templates.push_back(std::move(g));
    }
    return templates;
}

std::vector<double> apply_shift(std::span<const double> image, const ImageShape& shape, DomainShift shift,
                                double sigma, std::uint64_t seed) {
    switch (shift) {
    case DomainShift::invert: {
        std::vector<double> out(image.begin(), image.end());
        for (auto& p : out) p = 1.0 - p;
        return out;
    }
    case DomainShift::rotate90: return rotate_quarter_turns(image, shape, 1);
    case DomainShift::noise: {
        if (sigma < 0.0) throw ConfigError("noise sigma must be >= 0");
        Rng rng(seed);
        std::vector<double> out(image.begin(), image.end());
        for (auto& p : out) p = std::clamp(p + sigma * rng.normal(), 0.0, 1.0);
        return out;
    }
    }
    return {image.begin(), image.end()};
}

std::pair<DomainDataset, DomainDataset> synth_two_domain(const SynthSpec& spec) {
    spec.validate();
    const auto templates = glyph_templates(spec.n_classes, spec.seed);
    DomainDataset source;
    DomainDataset target;
    for (auto* ds : {&source, &target}) {
        ds->image_shape = {1, kGlyph, kGlyph};
        ds->num_classes = spec.n_classes;
        for (std::size_t c = 0; c < spec.n_classes; ++c) ds->class_names.push_back("glyph" + std::to_string(c));
    }
    source.domain_tag = "synth_source";
    target.domain_tag = "synth_target_" + std::string(to_string(spec.shift));
    for (std::size_t c = 0; c < spec.n_classes; ++c)
        for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
            Rng src_rng(hash_seed({spec.seed, 1, c, i}));
            source.push_back(render_sample(templates[c], src_rng), c);
            Rng tgt_rng(hash_seed({spec.seed, 2, c, i}));
            const auto clean = render_sample(templates[c], tgt_rng);
            target.push_back(apply_shift(clean, target.image_shape, spec.shift, spec.sigma,
                                         hash_seed({spec.seed, 3, c, i})),
                             c);
        }
    return {std::move(source), std::move(target)};
}

} // namespace gcl
