#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "gcl/errors.hpp"
#include "gcl/prototype_bank.hpp"
#include "support.hpp"

using namespace gcl;
namespace oracle = gcl::test::oracle;

namespace {

std::vector<std::vector<double>> encodings(const ConceptModel& m, const DomainDataset& ds,
                                           const std::vector<std::size_t>& idx) {
    std::vector<std::vector<double>> out;
    for (auto i : idx) out.push_back(m.forward(ds.image(i)).concepts.data);
    return out;
}

ConceptBank two_class_bank() {
    ConceptBank b;
    b.mu = 0.8;
    b.num_concepts = 3;
    b.concept_dim = 2;
    b.last_update_step = 42;
    b.config_hash = "deadbeef";
    b.class_ids = {0, 1};
    b.prototypes = {test::random_vector(6, 1), test::random_vector(6, 2)};
    return b;
}

} // namespace

TEST_CASE("prototype set sampling") {
    const ImageShape shape{1, 4, 4};
    const auto source = test::random_dataset(10, 7, shape, 1);
    const auto target = test::random_dataset(10, 3, shape, 2);
    const auto sets = sample_prototype_sets(source, target, 5, 1, 9);
    std::size_t total = 0;
    for (std::size_t c = 0; c < 10; ++c) {
        total += sets.source_samples[c].size();
        const std::set<std::size_t> uniq(sets.source_samples[c].begin(), sets.source_samples[c].end());
        CHECK(uniq.size() == 5);
        for (auto i : uniq) CHECK(source.labels[i] == c);
        REQUIRE(sets.target_samples[c].size() == 1);
        CHECK(target.labels[sets.target_samples[c][0]] == c);
    }
    CHECK(total == 50);
    CHECK(sample_prototype_sets(source, target, 5, 1, 9) == sets);
    CHECK_FALSE(sample_prototype_sets(source, target, 5, 1, 10) == sets);
    CHECK(prototype_sets_from_json(to_json(sets)) == sets);

    try {
        (void)sample_prototype_sets(source, target, 5, 4, 9);
        FAIL("expected a coverage error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("class 0") != std::string::npos);
    }
    CHECK_THROWS_AS(sample_prototype_sets(source, target, 8, 1, 9), DataError);
}

TEST_CASE("mixing endpoints and midpoint") {
    const std::vector<std::vector<double>> s{{1, 0}}, t{{0, 1}};
    CHECK(mix_prototype(s, t, 0.5) == std::vector<double>{0.5, 0.5});
    CHECK(mix_prototype(s, t, 1.0) == std::vector<double>{1, 0});
    CHECK(mix_prototype(s, t, 0.0) == std::vector<double>{0, 1});
    CHECK(mix_prototype(s, {}, 1.0) == std::vector<double>{1, 0});
    CHECK_THROWS_AS(mix_prototype(s, {}, 0.5), DataError);
    CHECK_THROWS_AS(mix_prototype(s, t, 1.5), ConfigError);
}

TEST_CASE("three source and one target embedding against a brute-force mean") {
    const std::vector<std::vector<double>> s{test::random_vector(4, 1), test::random_vector(4, 2),
                                             test::random_vector(4, 3)};
    const std::vector<std::vector<double>> t{test::random_vector(4, 4)};
    for (double mu : {0.0, 0.2, 0.5, 0.8, 1.0}) {
        const auto got = mix_prototype(s, t, mu);
        for (std::size_t k = 0; k < 4; ++k) {
            const double expected = mu * (s[0][k] + s[1][k] + s[2][k]) / 3.0 + (1 - mu) * t[0][k];
            CHECK(std::abs(got[k] - expected) < 1e-12);
        }
    }
}

TEST_CASE("update matches the weighted-mean oracle per class") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto spec = test::stub_spec(seed);
        spec.concept_dim = 2;
        const ConceptModel model(spec);
        const auto data = test::random_train_data(spec, 30 + seed);
        const auto sets = sample_prototype_sets(data.source, data.target, 5, 2, seed);
        for (double mu : {0.0, 0.5, 0.8, 1.0}) {
            const auto bank = update_bank(make_bank(spec, mu), model, data.source, data.target, sets, 3);
            CHECK(bank.last_update_step == 3);
            for (std::size_t c = 0; c < spec.num_classes; ++c) {
                const auto src = encodings(model, data.source, sets.source_samples[c]);
                const auto tgt = encodings(model, data.target, sets.target_samples[c]);
                const auto expected = oracle::weighted_mean(src, tgt, mu);
                const auto got = bank.lookup(c);
                REQUIRE(got.size() == expected.size());
                for (std::size_t k = 0; k < got.size(); ++k) CHECK(std::abs(got[k] - expected[k]) < 1e-6);
                CHECK(all_finite(got));
                if (mu == 1.0) CHECK(got == oracle::weighted_mean(src, src, 1.0));
                if (mu == 0.0) CHECK(got == oracle::weighted_mean(tgt, tgt, 1.0));
            }
        }
    }
}

TEST_CASE("source-only bank never reads the target") {
    const auto spec = test::stub_spec();
    const ConceptModel model(spec);
    const auto data = test::random_train_data(spec, 4);
    const auto sets = sample_prototype_sets(data.source, data.target, 5, 0, 1);
    CHECK(sets.target_samples[0].empty());
    const auto bank = update_bank(make_bank(spec, 1.0), model, data.source, DomainDataset{}, sets, 1);
    CHECK(bank.prototypes.size() == 2);
    CHECK_THROWS_AS(update_bank(make_bank(spec, 0.5), model, data.source, data.target, sets, 1), DataError);
}

TEST_CASE("update sequencing and lookup") {
    const auto spec = test::stub_spec();
    const ConceptModel model(spec);
    const auto data = test::random_train_data(spec, 5);
    const auto sets = sample_prototype_sets(data.source, data.target, 5, 1, 2);
    CHECK_THROWS_AS(update_bank(make_bank(spec, 0.8), model, data.source, data.target, sets, 0), ContractError);
    const auto bank = update_bank(make_bank(spec, 0.8), model, data.source, data.target, sets, 1);
    CHECK(bank.lookup(1) == bank.prototypes[1]);
    CHECK(bank.lookup(0) == bank.lookup(0));
    auto copy = bank.lookup(0);
    copy[0] += 1.0;
    CHECK(bank.lookup(0) != copy);
    CHECK_THROWS_AS(bank.lookup(2), ContractError);
}

TEST_CASE("codebook file round trip") {
    const auto dir = test::temp_dir("bank");
    const auto bank = two_class_bank();
    save_bank(bank, dir + "/c.bin");
    CHECK(load_bank(dir + "/c.bin") == bank);
    CHECK(load_bank(dir + "/c.bin", 3, 2) == bank);
    CHECK_THROWS_AS(load_bank(dir + "/c.bin", 2, 3), FormatError);
    CHECK_THROWS_AS(load_bank(dir + "/missing.bin"), IoError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("truncated prototype record names the class") {
    const auto dir = test::temp_dir("bank");
    save_bank(two_class_bank(), dir + "/c.bin");
    auto bytes = test::read_bytes(dir + "/c.bin");
    bytes.resize(bytes.size() - 12); // into the second record's values
    test::write_bytes(dir + "/cut.bin", bytes);
    try {
        (void)load_bank(dir + "/cut.bin");
        FAIL("expected a format error");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("class 1") != std::string::npos);
    }

    bytes = test::read_bytes(dir + "/c.bin");
    bytes[8] = 9; // version
    test::write_bytes(dir + "/ver.bin", bytes);
    try {
        (void)load_bank(dir + "/ver.bin");
        FAIL("expected a format error");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("version") != std::string::npos);
    }
    std::filesystem::remove_all(dir);
}
