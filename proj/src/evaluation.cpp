#include "gcl/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "gcl/errors.hpp"
#include "gcl/rng.hpp"

namespace gcl {

namespace {

constexpr std::size_t kChunk = 64;

// Runs `fn(first, count)` over consecutive chunks of a dataset.
template <typename Fn>
void for_chunks(const DomainDataset& ds, Fn fn) {
    for (std::size_t first = 0; first < ds.size(); first += kChunk) fn(first, std::min(kChunk, ds.size() - first));
}

std::span<const double> chunk_pixels(const DomainDataset& ds, std::size_t first, std::size_t count) {
    return std::span<const double>(ds.pixels).subspan(first * ds.image_size(), count * ds.image_size());
}

} // namespace

std::size_t argmax(std::span<const double> values) {
    if (values.empty()) throw ContractError("argmax of an empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return best;
}

double accuracy_from_scores(const Tensor& scores, std::span<const std::size_t> labels) {
    if (labels.empty()) throw ContractError("accuracy of an empty dataset");
    if (scores.rank() != 2 || scores.shape[0] != labels.size())
        throw ContractError("score rows do not match the label count");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) correct += argmax(scores.row(i)) == labels[i];
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double accuracy(const ConceptModel& model, const DomainDataset& dataset, double w1, double w2) {
    if (dataset.empty()) throw ContractError("accuracy of an empty dataset");
    std::size_t correct = 0;
    for_chunks(dataset, [&](std::size_t first, std::size_t count) {
        const auto scores = model.scores_batch(chunk_pixels(dataset, first, count), count, w1, w2);
        for (std::size_t r = 0; r < count; ++r) correct += argmax(scores.row(r)) == dataset.labels[first + r];
    });
    return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

// ---------------------------------------------------------------------------
// Concept sets

ConceptRule ConceptRule::top_k(std::size_t k) { return {RuleKind::top_k, k, 0.5}; }
ConceptRule ConceptRule::threshold(double gamma) { return {RuleKind::threshold, 5, gamma}; }

void ConceptRule::validate(std::size_t num_concepts) const {
    if (kind == RuleKind::top_k) {
        if (k == 0) throw ContractError("concept rule top_k needs k >= 1");
        if (k > num_concepts)
            throw ContractError("concept rule top_k(" + std::to_string(k) + ") exceeds the " +
                                std::to_string(num_concepts) + " available concepts");
    } else if (!(gamma > 0.0 && gamma <= 1.0)) {
        throw ContractError("concept rule threshold needs gamma in (0, 1]");
    }
}

nlohmann::json to_json(const ConceptRule& r) {
    if (r.kind == RuleKind::top_k) return {{"kind", "top_k"}, {"k", r.k}};
    return {{"kind", "threshold"}, {"gamma", r.gamma}};
}

ConceptRule concept_rule_from_json(const nlohmann::json& j) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "top_k") return ConceptRule::top_k(j.at("k").get<std::size_t>());
    if (kind == "threshold") return ConceptRule::threshold(j.at("gamma").get<double>());
    throw ConfigError("unknown concept rule '" + kind + "' (expected top_k or threshold)");
}

std::vector<double> concept_importance(std::span<const double> concepts, std::span<const double> relevances,
                                       std::size_t num_concepts, std::size_t concept_dim) {
    if (concepts.size() != num_concepts * concept_dim || relevances.size() != concepts.size())
        throw ContractError("concept and relevance matrices must both be K x d");
    std::vector<double> out(num_concepts);
    for (std::size_t k = 0; k < num_concepts; ++k) {
        if (concept_dim == 1) {
            out[k] = std::abs(concepts[k] * relevances[k]);
            continue;
        }
        double acc = 0.0;
        for (std::size_t j = 0; j < concept_dim; ++j) {
            const double v = concepts[k * concept_dim + j] * relevances[k * concept_dim + j];
            acc += v * v;
        }
        out[k] = std::sqrt(acc);
    }
    return out;
}

Tensor importance_matrix(const ConceptModel& model, const DomainDataset& dataset) {
    const std::size_t K = model.spec().num_concepts;
    const std::size_t d = model.spec().concept_dim;
    Tensor out({dataset.size(), K});
    for_chunks(dataset, [&](std::size_t first, std::size_t count) {
        const auto pixels = chunk_pixels(dataset, first, count);
        const auto concepts = model.encode_batch(pixels, count);
        const auto relevances = model.relevance_batch(pixels, count);
        for (std::size_t r = 0; r < count; ++r) {
            const auto imp = concept_importance(concepts.row(r), relevances.row(r), K, d);
            std::copy(imp.begin(), imp.end(), out.data.begin() + static_cast<std::ptrdiff_t>((first + r) * K));
        }
    });
    return out;
}

ConceptSet concept_set_from_importance(std::span<const double> importance, const ConceptRule& rule) {
    rule.validate(importance.size());
    ConceptSet set;
    set.rule = rule;
    if (rule.kind == RuleKind::top_k) {
        std::vector<std::size_t> order(importance.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return importance[a] > importance[b]; });
        set.members.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(rule.k));
    } else {
        const double peak = importance[argmax(importance)];
        for (std::size_t i = 0; i < importance.size(); ++i)
            if (importance[i] >= rule.gamma * peak) set.members.push_back(i);
    }
    std::sort(set.members.begin(), set.members.end());
    return set;
}

ConceptSet concept_set(const ConceptModel& model, std::span<const double> x, const ConceptRule& rule) {
    const auto out = model.forward(x);
    return concept_set_from_importance(concept_importance(out.concepts.values(), out.relevances.values(),
                                                          model.spec().num_concepts, model.spec().concept_dim),
                                       rule);
}

double iou(const ConceptSet& a, const ConceptSet& b) {
    std::vector<std::size_t> inter;
    std::vector<std::size_t> uni;
    std::set_intersection(a.members.begin(), a.members.end(), b.members.begin(), b.members.end(),
                          std::back_inserter(inter));
    std::set_union(a.members.begin(), a.members.end(), b.members.begin(), b.members.end(), std::back_inserter(uni));
    if (uni.empty()) return 1.0;
    return static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

nlohmann::json to_json(const FidelityReport& r) {
    nlohmann::json per_class = nlohmann::json::array();
    for (const auto& v : r.per_class) per_class.push_back(v ? nlohmann::json(*v) : nlohmann::json());
    return {{"per_class", per_class}, {"overall", r.overall}, {"pairs", r.pairs}, {"rule", to_json(r.rule)}};
}

FidelityReport fidelity_from_sets(std::span<const ConceptSet> sets, std::span<const std::size_t> labels,
                                  std::size_t num_classes, const PairPolicy& policy) {
    if (sets.size() != labels.size()) throw ContractError("concept sets and labels differ in count");
    FidelityReport report;
    report.per_class.resize(num_classes);
    if (!sets.empty()) report.rule = sets.front().rule;
    std::vector<std::vector<std::size_t>> members(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_classes) throw ContractError("label outside the class range");
        members[labels[i]].push_back(i);
    }
    double overall = 0.0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        const auto& m = members[c];
        if (m.size() < 2) continue;
        const std::size_t all_pairs = m.size() * (m.size() - 1) / 2;
        double acc = 0.0;
        std::size_t n = 0;
        if (all_pairs <= policy.exhaustive_budget) {
            for (std::size_t a = 0; a < m.size(); ++a)
                for (std::size_t b = a + 1; b < m.size(); ++b, ++n) acc += iou(sets[m[a]], sets[m[b]]);
        } else {
            Rng rng(hash_seed({policy.seed, c, 0x9a12u}));
            for (; n < policy.sampled_pairs; ++n) {
                const auto a = static_cast<std::size_t>(rng.below(m.size()));
                auto b = static_cast<std::size_t>(rng.below(m.size() - 1));
                if (b >= a) ++b;
                acc += iou(sets[m[a]], sets[m[b]]);
            }
        }
        report.per_class[c] = acc / static_cast<double>(n);
        report.pairs += n;
        overall += *report.per_class[c];
        ++counted;
    }
    if (counted == 0) throw ContractError("fidelity needs a class with at least two samples");
    report.overall = overall / static_cast<double>(counted);
    return report;
}

FidelityReport fidelity_score(const ConceptModel& model, const DomainDataset& dataset, const ConceptRule& rule,
                              const PairPolicy& pairs) {
    rule.validate(model.spec().num_concepts);
    const auto imp = importance_matrix(model, dataset);
    std::vector<ConceptSet> sets;
    sets.reserve(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) sets.push_back(concept_set_from_importance(imp.row(i), rule));
    auto report = fidelity_from_sets(sets, dataset.labels, dataset.num_classes, pairs);
    report.rule = rule;
    return report;
}

// ---------------------------------------------------------------------------
// Prototype explanations

RankedPrototypes rank_by_concept(const Tensor& importance, std::size_t concept_index, std::size_t top_k) {
    if (importance.rank() != 2) throw ContractError("importance matrix must be [n, K]");
    const std::size_t n = importance.shape[0];
    const std::size_t K = importance.shape[1];
    if (concept_index >= K)
        throw ContractError("concept index " + std::to_string(concept_index) + " outside 0.." + std::to_string(K - 1));
    if (top_k > n) throw ContractError("top_k exceeds the dataset size");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto score = [&](std::size_t i) { return importance[i * K + concept_index]; };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score(a) > score(b); });
    RankedPrototypes out;
    for (std::size_t r = 0; r < top_k; ++r) {
        out.indices.push_back(order[r]);
        out.scores.push_back(score(order[r]));
    }
    return out;
}

RankedPrototypes top_prototypes(const ConceptModel& model, std::size_t concept_index, const DomainDataset& dataset,
                                std::size_t top_k) {
    if (concept_index >= model.spec().num_concepts)
        throw ContractError("concept index " + std::to_string(concept_index) + " outside 0.." +
                            std::to_string(model.spec().num_concepts - 1));
    return rank_by_concept(importance_matrix(model, dataset), concept_index, top_k);
}

nlohmann::json to_json(const Explanation& e) {
    return {{"query_index", e.query_index ? nlohmann::json(*e.query_index) : nlohmann::json()},
            {"top_concept", e.top_concept},
            {"prototype_indices", e.prototype_indices},
            {"scores", e.scores}};
}

Explanation explain_from_importance(std::span<const double> query_importance, const Tensor& dataset_importance,
                                    std::size_t top_k) {
    Explanation e;
    e.top_concept = argmax(query_importance);
    auto ranked = rank_by_concept(dataset_importance, e.top_concept, top_k);
    e.prototype_indices = std::move(ranked.indices);
    e.scores = std::move(ranked.scores);
    return e;
}

Explanation explain(const ConceptModel& model, std::span<const double> x, const DomainDataset& dataset,
                    std::size_t top_k) {
    const auto concepts = model.encode_batch(x, 1);
    const auto relevances = model.relevance_batch(x, 1);
    const auto query = concept_importance(concepts.values(), relevances.values(), model.spec().num_concepts,
                                          model.spec().concept_dim);
    const auto imp = importance_matrix(model, dataset);
    auto e = explain_from_importance(query, imp, top_k);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto img = dataset.image(i);
        if (std::equal(img.begin(), img.end(), x.begin(), x.end())) {
            e.query_index = i;
            break;
        }
    }
    return e;
}

// ---------------------------------------------------------------------------
// Ablation table

nlohmann::json AblationTable::to_json() const {
    nlohmann::json rows_json = nlohmann::json::array();
    for (const auto& r : rows)
        rows_json.push_back({{"name", r.name},
                             {"ablation", std::string(gcl::to_string(r.ablation))},
                             {"accuracy", r.accuracy},
                             {"fidelity", gcl::to_json(r.fidelity)},
                             {"best_val_accuracy", r.best_val},
                             {"steps", r.steps}});
    return {{"rows", rows_json}};
}

std::string AblationTable::to_text() const {
    std::ostringstream out;
    out << fmt::format("{:<16} {:<12} {:>9} {:>9} {:>8}\n", "setting", "ablation", "accuracy", "fidelity", "steps");
    for (const auto& r : rows)
        out << fmt::format("{:<16} {:<12} {:>9.4f} {:>9.4f} {:>8}\n", r.name, gcl::to_string(r.ablation), r.accuracy,
                           r.fidelity.overall, r.steps);
    if (!rows.empty()) out << "concept rule: " << gcl::to_json(rows.front().fidelity.rule).dump() << "\n";
    return out.str();
}

AblationTable ablate(std::span<const AblationSetting> settings, const ModelSpec& spec, const TrainData& data,
                     const DomainDataset& test, const ConceptRule& rule) {
    rule.validate(spec.num_concepts);
    AblationTable table;
    for (const auto& s : settings) {
        auto result = train(s.config, spec, data);
        AblationRow row;
        row.name = s.name;
        row.ablation = s.config.ablation;
        row.accuracy = accuracy(result.model, test, s.config.weights.omega1, s.config.weights.omega2);
        row.fidelity = fidelity_score(result.model, test, rule);
        row.best_val = result.best_val;
        row.steps = result.steps_run;
        table.rows.push_back(std::move(row));
    }
    return table;
}

} // namespace gcl
