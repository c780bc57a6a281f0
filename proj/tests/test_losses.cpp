#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "gcl/errors.hpp"
#include "gcl/losses.hpp"
#include "support.hpp"

using namespace gcl;
namespace oracle = gcl::test::oracle;

namespace {

ContrastiveBatch equal_similarity_batch(std::size_t negatives) {
    ContrastiveBatch b;
    b.anchor = {1.0, 0.0, 0.0};
    b.positives = {{0.0, 1.0, 0.0}};
    for (std::size_t i = 0; i < negatives; ++i) b.negatives.push_back({0.0, 0.0, 1.0 + static_cast<double>(i)});
    return b;
}

} // namespace

TEST_CASE("reconstruction with sparsity") {
    const std::vector<double> x{1.0, 0.0};
    CHECK(reconstruction_sparsity(x, x, std::vector<double>{0.0, 0.0}, 0.5) == 0.0);
    CHECK(reconstruction_sparsity(x, std::vector<double>{0.0, 0.0}, std::vector<double>{2.0, -1.0}, 0.1) ==
          doctest::Approx(0.8).epsilon(1e-12));

    const auto a = test::random_vector(12, 1);
    const auto r = test::random_vector(12, 2);
    const auto c = test::random_vector(5, 3);
    CHECK(reconstruction_sparsity(a, r, c, 0.0) == doctest::Approx(oracle::mse(a, r)).epsilon(1e-12));
    CHECK(reconstruction_sparsity(a, r, c, 0.3) ==
          doctest::Approx(oracle::mse(a, r) + 0.3 * oracle::l1(c)).epsilon(1e-12));
    CHECK_THROWS_AS(reconstruction_sparsity(a, std::vector<double>(3), c, 0.1), ContractError);
}

TEST_CASE("contrastive closed forms") {
    CHECK(contrastive_loss(equal_similarity_batch(1), 0.5) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    for (std::size_t m : {1u, 2u, 8u})
        CHECK(std::abs(contrastive_loss(equal_similarity_batch(m), 0.5) - std::log1p(static_cast<double>(m))) < 1e-6);

    ContrastiveBatch b;
    b.anchor = {1.0, 0.0};
    b.positives = {{2.0, 0.0}};
    b.negatives = {{0.0, 3.0}};
    const double expected = -std::log(std::exp(2.0) / (std::exp(2.0) + 1.0));
    CHECK(std::abs(contrastive_loss(b, 0.5) - expected) < 1e-12);
    CHECK(std::abs(contrastive_loss(b, 0.5) - 0.126928) < 1e-6);
}

TEST_CASE("contrastive matches a literal evaluation on random embeddings") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        ContrastiveBatch b;
        b.anchor = test::random_vector(6, seed * 10);
        for (int p = 0; p < 3; ++p) b.positives.push_back(test::random_vector(6, seed * 10 + 1 + p));
        for (int n = 0; n < 4; ++n) b.negatives.push_back(test::random_vector(6, seed * 10 + 5 + n));
        const double tau = 0.2 + 0.1 * static_cast<double>(seed % 5);
        std::vector<double> sn;
        for (const auto& n : b.negatives) sn.push_back(oracle::cosine(b.anchor, n));
        double expected = 0.0;
        for (const auto& p : b.positives) expected += oracle::info_nce(oracle::cosine(b.anchor, p), sn, tau);
        expected /= 3.0;
        CHECK(contrastive_loss(b, tau) == doctest::Approx(expected).epsilon(1e-10));
        CHECK(contrastive_loss(b, tau) >= 0.0);

        // set semantics over negatives
        auto shuffled = b;
        std::reverse(shuffled.negatives.begin(), shuffled.negatives.end());
        CHECK(contrastive_loss(shuffled, tau) == doctest::Approx(contrastive_loss(b, tau)).epsilon(1e-13));
    }
}

TEST_CASE("contrastive with dot similarity") {
    ContrastiveBatch b;
    b.anchor = {1.0, 2.0};
    b.positives = {{0.5, 0.5}};
    b.negatives = {{-1.0, 0.0}, {0.0, 0.25}};
    const std::vector<double> sn{-1.0, 0.5};
    CHECK(contrastive_loss(b, 0.7, Similarity::dot) == doctest::Approx(oracle::info_nce(1.5, sn, 0.7)).epsilon(1e-12));
}

TEST_CASE("contrastive errors") {
    auto b = equal_similarity_batch(1);
    CHECK_THROWS_AS(contrastive_loss(b, 0.0), ConfigError);
    CHECK_THROWS_AS(contrastive_loss(b, -1.0), ConfigError);
    b.positives.front() = {0.0, 0.0, 0.0};
    CHECK_THROWS_AS(contrastive_loss(b, 0.5), DegenerateEmbeddingError);
    auto empty = equal_similarity_batch(1);
    empty.negatives.clear();
    CHECK_THROWS_AS(contrastive_loss(empty, 0.5), ContractError);
}

TEST_CASE("grounding loss") {
    const std::vector<double> p{0.2, -0.4, 1.0};
    CHECK(grounding_loss(p, p) == 0.0);
    CHECK(grounding_loss(std::vector<double>{1, 1}, std::vector<double>{0, 0}) == doctest::Approx(1.0));
    const auto a = test::random_vector(7, 4);
    const auto b = test::random_vector(7, 5);
    std::vector<double> a3, b3;
    for (double v : a) a3.push_back(3 * v);
    for (double v : b) b3.push_back(3 * v);
    CHECK(grounding_loss(a3, b3) == doctest::Approx(9.0 * grounding_loss(a, b)).epsilon(1e-12));
    CHECK(grounding_loss(a, b) == doctest::Approx(oracle::mse(a, b)).epsilon(1e-12));
    CHECK_THROWS_AS(grounding_loss(a, std::vector<double>(2)), ContractError);
}

TEST_CASE("fidelity loss") {
    const std::vector<double> a{1, 0}, b{0, 1};
    CHECK(fidelity_loss(a, a, true) == 0.0);
    CHECK(fidelity_loss(a, b, false) == 0.0);
    CHECK(fidelity_loss(a, b, true) == doctest::Approx(1.0));
    CHECK_THROWS_AS(fidelity_loss(a, std::vector<double>(3), true), ContractError);
}

TEST_CASE("codebook supervision") {
    const std::vector<double> c{1, 1}, z{0, 0};
    CHECK(codebook_supervision_loss(c, z, 0.0) == 0.0);
    CHECK(codebook_supervision_loss(c, c, 2.0) == 0.0);
    CHECK(codebook_supervision_loss(c, z, 2.0) == doctest::Approx(2.0));
}

TEST_CASE("composition of the total") {
    LossBreakdown t;
    t.pred = 1;
    t.rec = 2;
    t.ssl = 3;
    t.grnd = 4;
    t.fid = 5;
    ObjectiveWeights w;
    w.beta = 0.5;
    w.lambda1 = w.lambda2 = 0.1;
    CHECK(compose(t, w, Ablation::rce_pcg_ccl).total == doctest::Approx(4.95).epsilon(1e-12));

    w.beta = 0.0;
    CHECK(compose(t, w, Ablation::rce_pcg_ccl).total == 3.0);

    w.beta = 1.0;
    w.lambda1 = w.lambda2 = 0.0;
    CHECK(compose(t, w, Ablation::rce_pcg_ccl).total == doctest::Approx(6.0));

    const auto rce = compose(t, ObjectiveWeights{}, Ablation::rce);
    CHECK(rce.ssl == 0.0);
    CHECK(rce.grnd == 0.0);
    CHECK(rce.fid == 0.0);
    CHECK(rce.total == 3.0);
    const auto pcg = compose(t, ObjectiveWeights{}, Ablation::rce_pcg);
    CHECK(pcg.ssl == 0.0);
    CHECK(pcg.grnd == 4.0);
}

TEST_CASE("single-sample total matches its parts") {
    const auto spec = test::stub_spec();
    const ConceptModel model(spec);
    const auto x = test::random_vector(spec.input_size(), 9, 0.0, 1.0);
    const auto fwd = model.forward(x);
    TotalLossInputs in;
    in.x = x;
    in.label = 1;
    in.contrastive = ContrastiveBatch{fwd.concepts.data, {test::random_vector(2, 1)}, {test::random_vector(2, 2)}};
    in.prototype = test::random_vector(2, 3);
    in.fidelity_partners = {{test::random_vector(2, 4), true}, {test::random_vector(2, 5), false}};
    ObjectiveWeights w;
    const auto b = total_loss(fwd, in, w, Ablation::rce_pcg_ccl);
    CHECK(b.rec == doctest::Approx(reconstruction_sparsity(x, fwd.reconstruction.data, fwd.concepts.data, w.lambda)));
    CHECK(b.grnd == doctest::Approx(grounding_loss(fwd.concepts.data, *in.prototype)));
    CHECK(b.total == doctest::Approx(b.pred + b.rec + w.beta * (b.ssl + w.lambda1 * b.grnd + w.lambda2 * b.fid))
                         .epsilon(1e-9));
    CHECK(b.rec >= 0.0);
    CHECK(b.fid >= 0.0);
    CHECK(b.ssl >= 0.0);
    CHECK_THROWS_AS(total_loss(fwd, TotalLossInputs{x, 7, {}, {}, {}}, w, Ablation::rce), ContractError);
}

TEST_CASE("prediction loss is softmax cross-entropy") {
    const std::vector<double> s{1.0, 2.0, 0.5};
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(0.5);
    CHECK(prediction_loss(s, 1) == doctest::Approx(-std::log(std::exp(2.0) / z)).epsilon(1e-12));
}

TEST_CASE("gradients of every term match central differences") {
    for (const auto& t : test::gradient_suite()) {
        INFO(t.term, " worst ", t.report.worst, " analytic ", t.report.worst_analytic, " numeric ",
             t.report.worst_numeric, " over ", t.report.checked);
        CHECK(t.report.checked <= 1000);
        CHECK(t.report.max_rel_error < 1e-4);
    }
}
