#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "gcl/checkpoint.hpp"
#include "gcl/concept_model.hpp"
#include "gcl/errors.hpp"
#include "support.hpp"

using namespace gcl;

namespace {

void fill(ConceptModel& m, std::string_view name, std::vector<double> values) {
    auto& p = m.parameter(name);
    REQUIRE(p.size() == values.size());
    p.data = std::move(values);
}

} // namespace

TEST_CASE("forward shapes follow the spec") {
    ModelSpec spec;
    spec.input_shape = {1, 8, 8};
    spec.num_classes = 10;
    spec.num_concepts = 10;
    const ConceptModel model(spec);
    const auto out = model.forward(test::random_vector(64, 1, 0, 1));
    CHECK(out.concepts.shape == Shape{10, 1});
    CHECK(out.relevances.shape == Shape{10, 1});
    CHECK(out.reconstruction.shape == Shape{1, 8, 8});
    CHECK(out.aggregator_logits.size() == 10);
    CHECK(out.selector_logits.size() == 10);
}

TEST_CASE("shape closure over specs and random inputs") {
    std::vector<ModelSpec> specs;
    for (auto backbone : {Backbone::small_conv, Backbone::mlp})
        for (std::size_t d : {1u, 3u}) {
            ModelSpec s;
            s.input_shape = {3, 9, 7};
            s.num_classes = 5;
            s.num_concepts = 4;
            s.concept_dim = d;
            s.backbone = backbone;
            s.conv_width = 2;
            s.hidden = 6;
            specs.push_back(s);
        }
    for (const auto& spec : specs) {
        const ConceptModel model(spec);
        for (std::uint64_t i = 0; i < 100; ++i) {
            const auto out = model.forward(test::random_vector(spec.input_size(), i, 0, 1));
            CHECK(out.concepts.shape == Shape{spec.num_concepts, spec.concept_dim});
            CHECK(out.relevances.shape == out.concepts.shape);
            CHECK(out.reconstruction.shape == Shape{3, 9, 7});
            CHECK(out.aggregator_logits.size() == spec.num_classes);
            CHECK(all_finite(out.selector_logits.data));
        }
    }
}

TEST_CASE("zero weights give bias-only heads") {
    auto spec = test::stub_spec();
    ConceptModel model(spec);
    for (auto& p : model.parameters())
        if (p.name.ends_with(".weight") || p.name.starts_with("F.") || p.name.starts_with("H."))
            std::fill(p.value.data.begin(), p.value.data.end(), 0.0);
    for (std::uint64_t i = 0; i < 5; ++i) {
        const auto out = model.forward(test::random_vector(spec.input_size(), i, 0, 1));
        for (double c : out.concepts.data) CHECK(c == 0.0);
        CHECK(out.aggregator_logits.data == model.parameter("A.fc2.bias").data);
    }
}

TEST_CASE("hand-set two-class stub") {
    auto spec = test::stub_spec();
    spec.hidden = 2;
    ConceptModel model(spec);
    for (auto& p : model.parameters()) std::fill(p.value.data.begin(), p.value.data.end(), 0.0);
    fill(model, "F.fc.bias", {1.0, 0.0});
    fill(model, "H.fc.bias", {1.0, 1.0});
    fill(model, "A.fc1.weight", {1, 0, 0, 1});
    fill(model, "A.fc2.weight", {1, 0, 0, 1});
    const auto out = model.forward(test::random_vector(spec.input_size(), 3, 0, 1));
    CHECK(out.aggregator_logits.data == std::vector<double>{1.0, 0.0});
}

TEST_CASE("weighted prediction") {
    const auto spec = test::stub_spec();
    const ConceptModel model(spec);
    const auto x = test::random_vector(spec.input_size(), 5, 0, 1);
    const auto out = model.forward(x);
    CHECK(model.predict(x, 1, 0) == out.aggregator_logits.data);
    CHECK(model.predict(x, 0, 1) == out.selector_logits.data);
    CHECK(weighted_prediction(std::vector<double>{2, 0}, std::vector<double>{0, 2}, 0.5, 0.5) ==
          std::vector<double>{1, 1});
    const auto base = model.predict(x, 0.3, 0.6);
    for (double a : {0.0, 0.5, 2.0, 7.0}) {
        const auto scaled = model.predict(x, a * 0.3, a * 0.6);
        for (std::size_t i = 0; i < base.size(); ++i)
            CHECK(scaled[i] == doctest::Approx(a * base[i]).epsilon(1e-12));
    }
    CHECK_THROWS_AS(model.predict(x, -0.1, 1.0), ConfigError);
}

TEST_CASE("batched inference agrees with single samples") {
    const auto spec = test::stub_spec();
    const ConceptModel model(spec);
    const auto data = test::random_dataset(2, 3, {1, 8, 8}, 4);
    const auto scores = model.scores_batch(data.pixels, data.size(), 0.5, 0.5);
    const auto concepts = model.encode_batch(data.pixels, data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto s = model.predict(data.image(i), 0.5, 0.5);
        const auto f = model.forward(data.image(i));
        for (std::size_t k = 0; k < s.size(); ++k) CHECK(scores.row(i)[k] == doctest::Approx(s[k]).epsilon(1e-12));
        for (std::size_t k = 0; k < 2; ++k) CHECK(concepts.row(i)[k] == doctest::Approx(f.concepts[k]).epsilon(1e-12));
    }
}

TEST_CASE("construction is deterministic in the seed") {
    const ConceptModel a(test::stub_spec(3)), b(test::stub_spec(3)), c(test::stub_spec(4));
    bool all_equal = true, any_diff = false;
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
        all_equal = all_equal && a.parameters()[i].value == b.parameters()[i].value;
        any_diff = any_diff || !(a.parameters()[i].value == c.parameters()[i].value);
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("F and H share topology but not parameters") {
    const ConceptModel m(test::stub_spec());
    for (const auto& p : m.parameters()) {
        if (!p.name.starts_with("F.")) continue;
        const auto& h = m.parameter("H." + p.name.substr(2));
        CHECK(h.shape == p.value.shape);
        CHECK_FALSE(h == p.value);
    }
}

TEST_CASE("contract errors") {
    const auto spec = test::stub_spec();
    ConceptModel model(spec);
    CHECK_THROWS_AS(model.forward(std::vector<double>(10)), ContractError);
    model.parameter("T.fc1.weight").data[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(model.check_finite(), DivergenceError);
    CHECK_THROWS_AS(model.forward(test::random_vector(spec.input_size(), 1)), DivergenceError);

    ModelSpec bad = spec;
    bad.num_concepts = 0;
    CHECK_THROWS_AS(ConceptModel{bad}, ConfigError);
}

TEST_CASE("checkpoint round trip is value exact") {
    const auto dir = test::temp_dir("ckpt");
    auto spec = test::stub_spec();
    spec.concept_dim = 2;
    const ConceptModel model(spec);
    save_model(dir + "/m.ckpt", model, 17, "abc");
    const auto back = load_model(dir + "/m.ckpt");
    CHECK(back.spec() == spec);
    for (std::size_t i = 0; i < model.parameters().size(); ++i)
        CHECK(back.parameters()[i].value == model.parameters()[i].value);
    const auto x = test::random_vector(spec.input_size(), 2, 0, 1);
    CHECK(back.predict(x, 0.5, 0.5) == model.predict(x, 0.5, 0.5));

    auto other = spec;
    other.num_concepts = 3;
    CHECK_THROWS_AS(load_model(dir + "/m.ckpt", other), ConfigError);

    auto bytes = test::read_bytes(dir + "/m.ckpt");
    bytes.resize(bytes.size() - 5);
    test::write_bytes(dir + "/cut.ckpt", bytes);
    CHECK_THROWS_AS(load_model(dir + "/cut.ckpt"), FormatError);
    std::filesystem::remove_all(dir);
}
