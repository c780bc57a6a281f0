#pragma once

// Objective terms. Each term exists twice: a plain function over value
// spans (reporting, fixtures) and a tape-level builder used for training and
// gradient checks. The plain versions evaluate the tape builders on
// constants, so both share one implementation.

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gcl/autodiff.hpp"
#include "gcl/concept_model.hpp"

namespace gcl {

enum class Ablation { rce, rce_pcg, rce_pcg_ccl, sca };

std::string_view to_string(Ablation a) noexcept;
Ablation parse_ablation(std::string_view name);

bool uses_ccl(Ablation a) noexcept; // rce_pcg_ccl, sca
bool uses_pcg(Ablation a) noexcept; // rce_pcg, rce_pcg_ccl
bool uses_codebook(Ablation a) noexcept; // sca

struct ObjectiveWeights {
    double lambda = 1e-5; // sparsity
    double tau = 0.5;
    double lambda1 = 0.1; // grounding
    double lambda2 = 0.1; // fidelity
    double beta = 1.0;
    double omega1 = 0.5;
    double omega2 = 0.5;
    double epsilon = 1.0; // codebook supervision (sca)
    double alpha = 1.0;   // ssl weight (sca)
    double xi = 1.0;      // reconstruction weight (sca)
    Similarity similarity = Similarity::cosine;

    void validate() const;
};

nlohmann::json to_json(const ObjectiveWeights& w);

struct LossBreakdown {
    double rec = 0;
    double pred = 0;
    double ssl = 0;
    double grnd = 0;
    double fid = 0;
    double codebook = 0;
    double total = 0;
    ObjectiveWeights weights_used;
};

nlohmann::json to_json(const LossBreakdown& b);

// Non-sca: pred + rec + beta * (ssl + lambda1 * grnd + lambda2 * fid).
// sca:     pred + xi * rec + alpha * ssl + codebook (codebook already carries epsilon).
double assemble_total(const LossBreakdown& b, const ObjectiveWeights& w, Ablation ablation);

// Zeroes the terms the ablation disables and fills total and weights_used.
LossBreakdown compose(LossBreakdown terms, const ObjectiveWeights& w, Ablation ablation);

struct ContrastiveBatch {
    std::vector<double> anchor;
    std::vector<std::vector<double>> positives;
    std::vector<std::vector<double>> negatives;

    void validate() const;
};

double reconstruction_sparsity(std::span<const double> x, std::span<const double> reconstruction,
                               std::span<const double> concepts, double lambda);
double contrastive_loss(const ContrastiveBatch& batch, double tau, Similarity similarity = Similarity::cosine);
double grounding_loss(std::span<const double> concepts, std::span<const double> prototype);
double fidelity_loss(std::span<const double> concepts_i, std::span<const double> concepts_j, bool labels_equal);
double codebook_supervision_loss(std::span<const double> concepts, std::span<const double> code, double epsilon);
double prediction_loss(std::span<const double> scores, std::size_t label);

// Inputs for the single-sample total. Optional parts are skipped when absent
// (their terms are then 0).
struct TotalLossInputs {
    std::span<const double> x;
    std::size_t label = 0;
    std::optional<ContrastiveBatch> contrastive;
    std::optional<std::vector<double>> prototype;
    // Concept vectors of other samples and whether they share the label.
    std::vector<std::pair<std::vector<double>, bool>> fidelity_partners;
};

LossBreakdown total_loss(const ForwardOutput& forward, const TotalLossInputs& in, const ObjectiveWeights& w,
                         Ablation ablation);

namespace terms {

// Batched tape terms; rows are samples.
Var reconstruction_sparsity(Var x, Var reconstruction, Var concepts, double lambda);
Var prediction(Var scores, std::span<const std::size_t> labels);
Var contrastive(Var anchors, Var positives, Var negatives, std::size_t per_anchor_pos, std::size_t per_anchor_neg,
                double tau, Similarity similarity);
Var grounding(Var concepts, Var prototypes);
Var fidelity(Var concepts, std::span<const std::size_t> labels);
Var codebook(Var concepts, Var codes, double epsilon);

} // namespace terms

} // namespace gcl
