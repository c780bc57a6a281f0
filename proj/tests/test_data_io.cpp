#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "gcl/data.hpp"
#include "gcl/errors.hpp"
#include "gcl/rng.hpp"
#include "support.hpp"

using namespace gcl;
namespace oracle = gcl::test::oracle;
namespace fs = std::filesystem;

namespace {

void write_pgm(const fs::path& path, std::size_t rows, std::size_t cols, unsigned char value) {
    std::ofstream out(path, std::ios::binary);
    out << "P5\n" << cols << " " << rows << "\n255\n";
    for (std::size_t i = 0; i < rows * cols; ++i) out.put(static_cast<char>(value));
}

std::pair<std::string, std::string> write_idx(const std::string& dir,
                                              const std::vector<std::vector<unsigned char>>& images,
                                              std::size_t rows, std::size_t cols,
                                              const std::vector<unsigned char>& labels) {
    const auto img = dir + "/images.idx", lab = dir + "/labels.idx";
    test::write_bytes(img, oracle::idx_images(images, rows, cols));
    test::write_bytes(lab, oracle::idx_labels(labels));
    return {img, lab};
}

} // namespace

TEST_CASE("IDX scaling") {
    const auto dir = test::temp_dir("idx");
    const auto [img, lab] = write_idx(dir, {{0, 255, 0, 255}}, 2, 2, {1});
    const auto ds = load_idx(img, lab);
    CHECK(ds.size() == 1);
    CHECK(ds.pixels == std::vector<double>{0, 1, 0, 1});
    CHECK(ds.image_shape == ImageShape{1, 2, 2});
    CHECK(ds.labels == std::vector<std::size_t>{1});
    fs::remove_all(dir);
}

TEST_CASE("IDX fixture round trips through the writer oracle") {
    const auto dir = test::temp_dir("idx");
    Rng rng(3);
    std::vector<std::vector<unsigned char>> images(3, std::vector<unsigned char>(12));
    for (auto& im : images)
        for (auto& b : im) b = static_cast<unsigned char>(rng.below(256));
    const std::vector<unsigned char> labels{2, 0, 1};
    const auto [img, lab] = write_idx(dir, images, 3, 4, labels);
    const auto ds = load_idx(img, lab);
    REQUIRE(ds.size() == 3);
    CHECK(ds.image_shape == ImageShape{1, 3, 4});
    CHECK(ds.num_classes == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(ds.labels[i] == labels[i]);
        const auto px = ds.image(i);
        for (std::size_t k = 0; k < 12; ++k) CHECK(px[k] == images[i][k] / 255.0);
    }
    fs::remove_all(dir);
}

TEST_CASE("IDX format errors") {
    const auto dir = test::temp_dir("idx");
    const auto [img, lab] = write_idx(dir, {{1, 2, 3, 4}, {5, 6, 7, 8}}, 2, 2, {0, 1});

    test::write_bytes(dir + "/short_labels.idx", oracle::idx_labels({0}));
    CHECK_THROWS_AS(load_idx(img, dir + "/short_labels.idx"), FormatError);

    auto bytes = test::read_bytes(img);
    bytes[0] = 7;
    test::write_bytes(dir + "/magic.idx", bytes);
    try {
        (void)load_idx(dir + "/magic.idx", lab);
        FAIL("expected a format error");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("offset 0") != std::string::npos);
    }

    bytes = test::read_bytes(img);
    bytes.resize(bytes.size() - 3);
    test::write_bytes(dir + "/cut.idx", bytes);
    try {
        (void)load_idx(dir + "/cut.idx", lab);
        FAIL("expected a format error");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("image folders") {
    const auto dir = test::temp_dir("folder");
    // created out of name order on purpose
    for (const auto& [cls, files] : std::vector<std::pair<std::string, std::vector<std::string>>>{
             {"zebra", {"b.pgm", "a.pgm"}}, {"apple", {"x.pgm", "c.pgm"}}, {"mango", {"m.pgm", "k.pgm"}}}) {
        fs::create_directories(dir + "/" + cls);
        for (const auto& f : files) write_pgm(dir + "/" + cls + "/" + f, 4, 4, static_cast<unsigned char>(f[0]));
    }
    const auto ds = load_image_folder(dir, {1, 4, 4});
    CHECK(ds.num_classes == 3);
    CHECK(ds.class_names == std::vector<std::string>{"apple", "mango", "zebra"});
    CHECK(ds.labels == std::vector<std::size_t>{0, 0, 1, 1, 2, 2});
    // files sorted inside each class: c, x | k, m | a, b
    const std::vector<char> first{'c', 'x', 'k', 'm', 'a', 'b'};
    for (std::size_t i = 0; i < 6; ++i) CHECK(ds.image(i)[0] == doctest::Approx(first[i] / 255.0));

    const auto resized = load_image_folder(dir, {1, 8, 8});
    CHECK(resized.image_shape == ImageShape{1, 8, 8});
    for (double p : resized.pixels) CHECK((p >= 0.0 && p <= 1.0));
    CHECK(load_image_folder(dir, {1, 4, 4}).pixels == ds.pixels);

    fs::create_directories(dir + "/empty");
    CHECK_THROWS_AS(load_image_folder(dir, {1, 4, 4}), DataError);
    fs::remove_all(dir);
}

TEST_CASE("two classes with one image each") {
    const auto dir = test::temp_dir("folder");
    fs::create_directories(dir + "/b");
    fs::create_directories(dir + "/a");
    write_pgm(dir + "/b/1.pgm", 2, 2, 10);
    write_pgm(dir + "/a/1.pgm", 2, 2, 200);
    const auto ds = load_image_folder(dir, {1, 2, 2});
    CHECK(ds.num_classes == 2);
    CHECK(ds.labels == std::vector<std::size_t>{0, 1});
    CHECK(ds.image(0)[0] == doctest::Approx(200 / 255.0));
    fs::remove_all(dir);
}

TEST_CASE("few-shot split") {
    const auto ds = test::random_dataset(10, 7, {1, 4, 4}, 1);
    const auto [train, rest] = few_shot_split(ds, 3, 5);
    CHECK(train.size() == 30);
    CHECK(rest.size() == 40);
    for (const auto& idx : train.indices_by_class()) CHECK(idx.size() == 3);

    // partition: every original image appears exactly once across the halves
    std::multiset<std::vector<double>> all, parts;
    for (std::size_t i = 0; i < ds.size(); ++i) all.insert({ds.image(i).begin(), ds.image(i).end()});
    for (const auto* half : {&train, &rest})
        for (std::size_t i = 0; i < half->size(); ++i) parts.insert({half->image(i).begin(), half->image(i).end()});
    CHECK(all == parts);

    const auto again = few_shot_split(ds, 3, 5);
    CHECK(again.first.pixels == train.pixels);
    CHECK(again.second.pixels == rest.pixels);

    const auto [full, none] = few_shot_split(ds, 7, 5);
    CHECK(full.size() == 70);
    CHECK(none.empty());
    CHECK_THROWS_AS(few_shot_split(ds, 8, 5), DataError);
}

TEST_CASE("stratified split") {
    const auto ds = test::random_dataset(3, 10, {1, 4, 4}, 2);
    const auto [a, b] = stratified_split(ds, 0.2, 1);
    CHECK(a.size() == 6);
    CHECK(b.size() == 24);
    CHECK_THROWS_AS(stratified_split(ds, 1.5, 1), ConfigError);
}

TEST_CASE("synthetic domain shifts") {
    const auto img = test::random_vector(256, 1, 0, 1);
    const ImageShape shape{1, 16, 16};
    const auto inv = apply_shift(img, shape, DomainShift::invert, 0, 0);
    for (std::size_t i = 0; i < 256; ++i) CHECK(inv[i] == 1.0 - img[i]);
    auto rot = img;
    for (int k = 0; k < 4; ++k) rot = apply_shift(rot, shape, DomainShift::rotate90, 0, 0);
    CHECK(rot == img);
    CHECK(apply_shift(img, shape, DomainShift::rotate90, 0, 0) != img);
    const auto noisy = apply_shift(img, shape, DomainShift::noise, 0.1, 3);
    for (double p : noisy) CHECK((p >= 0.0 && p <= 1.0));
    CHECK_THROWS_AS(apply_shift(img, shape, DomainShift::noise, -0.1, 3), ConfigError);
}

TEST_CASE("synthetic task") {
    SynthSpec s;
    s.n_classes = 4;
    s.samples_per_class = 20;
    s.seed = 5;
    const auto [src, tgt] = synth_two_domain(s);
    CHECK(src.size() == 80);
    CHECK(tgt.size() == 80);
    src.validate();
    tgt.validate();

    std::vector<std::vector<double>> means(4, std::vector<double>(256, 0.0));
    for (std::size_t i = 0; i < src.size(); ++i)
        for (std::size_t k = 0; k < 256; ++k) means[src.labels[i]][k] += src.image(i)[k] / 20.0;
    for (std::size_t a = 0; a < 4; ++a)
        for (std::size_t b = a + 1; b < 4; ++b) CHECK(oracle::mse(means[a], means[b]) > 0.0);

    const auto again = synth_two_domain(s);
    CHECK(again.first.pixels == src.pixels);
    CHECK(again.second.pixels == tgt.pixels);
    s.sigma = -1;
    CHECK_THROWS_AS(s.validate(), ConfigError);
}
