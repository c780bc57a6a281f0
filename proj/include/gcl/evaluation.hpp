#pragma once

// Accuracy, concept sets and their IoU fidelity, prototype explanations and
// ablation tables. Concept indices are 0-based. Rankings and argmax break
// ties toward the lower index.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gcl/concept_model.hpp"
#include "gcl/data.hpp"
#include "gcl/trainer.hpp"

namespace gcl {

// Fraction of samples whose argmax score equals the label.
double accuracy(const ConceptModel& model, const DomainDataset& dataset, double w1, double w2);
// Same, from precomputed score rows [n, N].
double accuracy_from_scores(const Tensor& scores, std::span<const std::size_t> labels);

std::size_t argmax(std::span<const double> values);

enum class RuleKind { top_k, threshold };

struct ConceptRule {
    RuleKind kind = RuleKind::top_k;
    std::size_t k = 5;
    double gamma = 0.5;

    static ConceptRule top_k(std::size_t k);
    static ConceptRule threshold(double gamma);

    void validate(std::size_t num_concepts) const;
    bool operator==(const ConceptRule&) const = default;
};

nlohmann::json to_json(const ConceptRule& r);
ConceptRule concept_rule_from_json(const nlohmann::json& j);

struct ConceptSet {
    std::vector<std::size_t> members; // ascending
    ConceptRule rule;
};

// Per-concept magnitude of concepts * relevances; rows of length d are
// reduced by their L2 norm (|x| when d == 1).
std::vector<double> concept_importance(std::span<const double> concepts, std::span<const double> relevances,
                                       std::size_t num_concepts, std::size_t concept_dim);

// Importance rows [n, K] for every sample of a dataset.
Tensor importance_matrix(const ConceptModel& model, const DomainDataset& dataset);

ConceptSet concept_set_from_importance(std::span<const double> importance, const ConceptRule& rule);
ConceptSet concept_set(const ConceptModel& model, std::span<const double> x, const ConceptRule& rule);

// |a & b| / |a | b|; two empty sets score 1.
double iou(const ConceptSet& a, const ConceptSet& b);

struct FidelityReport {
    std::vector<std::optional<double>> per_class; // empty optional: fewer than 2 samples
    double overall = 0.0;                         // mean of the per-class means
    std::size_t pairs = 0;
    ConceptRule rule;
};

nlohmann::json to_json(const FidelityReport& r);

struct PairPolicy {
    std::size_t exhaustive_budget = 5000; // per class
    std::size_t sampled_pairs = 100;      // per class, when over budget
    std::uint64_t seed = 0;
};

FidelityReport fidelity_from_sets(std::span<const ConceptSet> sets, std::span<const std::size_t> labels,
                                  std::size_t num_classes, const PairPolicy& pairs = {});
FidelityReport fidelity_score(const ConceptModel& model, const DomainDataset& dataset, const ConceptRule& rule,
                              const PairPolicy& pairs = {});

struct RankedPrototypes {
    std::vector<std::size_t> indices;
    std::vector<double> scores;
};

// Ranks rows of an importance matrix [n, K] by column `concept_index`.
RankedPrototypes rank_by_concept(const Tensor& importance, std::size_t concept_index, std::size_t top_k);
RankedPrototypes top_prototypes(const ConceptModel& model, std::size_t concept_index, const DomainDataset& dataset,
                                std::size_t top_k);

struct Explanation {
    std::optional<std::size_t> query_index;
    std::size_t top_concept = 0;
    std::vector<std::size_t> prototype_indices;
    std::vector<double> scores;
};

nlohmann::json to_json(const Explanation& e);

Explanation explain_from_importance(std::span<const double> query_importance, const Tensor& dataset_importance,
                                    std::size_t top_k);
Explanation explain(const ConceptModel& model, std::span<const double> x, const DomainDataset& dataset,
                    std::size_t top_k);

struct AblationSetting {
    std::string name;
    TrainConfig config;
};

struct AblationRow {
    std::string name;
    Ablation ablation;
    double accuracy = 0.0;
    FidelityReport fidelity;
    double best_val = 0.0;
    std::uint64_t steps = 0;
};

struct AblationTable {
    std::vector<AblationRow> rows;

    nlohmann::json to_json() const;
    std::string to_text() const;
};

// Trains every setting on the same data and scores it on `test`.
AblationTable ablate(std::span<const AblationSetting> settings, const ModelSpec& spec, const TrainData& data,
                     const DomainDataset& test, const ConceptRule& rule);

} // namespace gcl
