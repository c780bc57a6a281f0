#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gcl/augment.hpp"
#include "gcl/concept_model.hpp"
#include "gcl/data.hpp"
#include "gcl/losses.hpp"
#include "gcl/prototype_bank.hpp"

namespace gcl {

struct TrainConfig {
    ObjectiveWeights weights;
    double mu = 0.8;
    double lr0 = 0.01;
    double momentum = 0.9;
    std::size_t max_steps = 10000;
    std::size_t batch_size = 32;
    // Share of each batch drawn from the labelled target pool; 0 means
    // proportional to the pool sizes.
    double target_fraction = 0.0;
    std::size_t eval_interval = 100;
    std::size_t early_stop_patience = 10;
    Ablation ablation = Ablation::rce_pcg_ccl;
    std::uint64_t seed = 0;
    TransformPolicy augmentation;
    std::size_t prototypes_source = 5;
    std::size_t prototypes_target = 1;
    bool prototype_gradients = false;
    bool deterministic = true;

    // omega 0.5/0.5, beta 1.
    static TrainConfig digit();
    // omega 0.8/0.2, beta 0.5.
    static TrainConfig object();

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);

// lr0 * (1 + cos(pi * step / max_steps)) / 2; lr0 when max_steps == 0.
double cosine_lr(double lr0, std::size_t step, std::size_t max_steps);

// Training pools. Sample ids in the combined pool are source indices
// followed by target indices offset by source.size().
struct TrainData {
    DomainDataset source;
    DomainDataset target; // few-shot labelled target (may be empty)
    DomainDataset val;    // early stopping set (may be empty)

    void validate(const ModelSpec& spec) const;
};

// Few-shot target protocol: `shots` labelled target samples per class join
// training; the target remainder is split per class into validation
// (val_fraction) and test.
struct ExperimentData {
    TrainData train;
    DomainDataset test;
};

ExperimentData make_experiment(DomainDataset source, const DomainDataset& target, std::size_t shots,
                               double val_fraction, std::uint64_t seed);

struct Batch {
    std::vector<double> images;
    std::vector<std::size_t> labels;
    std::vector<std::uint64_t> ids;

    std::size_t size() const noexcept { return labels.size(); }
};

// Draws a batch without replacement. The target share is proportional to
// the pool sizes, with at least one target sample whenever target data exists.
Batch sample_batch(const TrainData& data, const TrainConfig& config, std::uint64_t step);

// For each batch row, the row providing its negatives: the next row (cyclic)
// with a different label, or the next row when all labels agree.
std::vector<std::size_t> negative_partners(std::span<const std::size_t> labels);

struct TrainState {
    ConceptModel model;
    std::vector<Tensor> velocity; // aligned with model.parameters()
    ConceptBank bank;
    PrototypeSets sets;
    std::uint64_t step = 0;
    double best_val = -std::numeric_limits<double>::infinity();
    std::uint64_t best_step = 0;
    std::size_t patience_counter = 0;
    bool stopped = false;
    std::vector<NamedTensor> best_params;

    explicit TrainState(ConceptModel m) : model(std::move(m)) {}
};

// Fresh state: zero velocity, prototype sets sampled from the seed, empty bank.
TrainState init_state(ConceptModel model, const TrainData& data, const TrainConfig& config);

void save_state(const std::filesystem::path& path, const TrainState& state, const std::string& config_hash = {});
TrainState load_state(const std::filesystem::path& path);

// Every loss term of one step, on the tape of `bound`. The bank must already
// hold the prototypes for `step`; terms an ablation disables are absent.
struct StepGraph {
    Var pred;
    Var rec;
    std::optional<Var> ssl;
    std::optional<Var> grnd;
    std::optional<Var> fid;
    std::optional<Var> codebook;
    Var total;
};

StepGraph build_step_graph(const ConceptModel& model, std::span<const Var> bound, const Batch& batch,
                           const TrainData& data, const PrototypeSets& sets, const ConceptBank& bank,
                           const TrainConfig& config, std::uint64_t step);

// One optimization step on `batch` at state.step; advances state.step.
// Throws DivergenceError (message carries the breakdown) on a non-finite loss.
LossBreakdown train_step(TrainState& state, const Batch& batch, const TrainData& data, const TrainConfig& config);

struct StepRecord {
    std::uint64_t step;
    double lr;
    LossBreakdown loss;
};

struct EvalRecord {
    std::uint64_t step;
    double val_accuracy;
};

nlohmann::json to_json(const StepRecord& r);

struct TrainCallbacks {
    std::function<void(const StepRecord&)> on_step;
    std::function<void(const EvalRecord&)> on_eval;
    // Called after each eval with the current state (checkpointing).
    std::function<void(const TrainState&)> on_checkpoint;
};

struct TrainResult {
    ConceptModel model; // best-validation parameters
    ConceptBank bank;   // final bank
    std::vector<StepRecord> history;
    std::vector<EvalRecord> evals;
    double best_val = -std::numeric_limits<double>::infinity();
    std::uint64_t best_step = 0;
    std::uint64_t steps_run = 0;
    bool stopped_early = false;
};

TrainResult train(const TrainConfig& config, const ModelSpec& spec, const TrainData& data,
                  const TrainCallbacks& callbacks = {});
// Continues from a saved state.
TrainResult train(const TrainConfig& config, TrainState state, const TrainData& data,
                  const TrainCallbacks& callbacks = {});

} // namespace gcl
