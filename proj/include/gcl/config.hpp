#pragma once

// Run configuration: a YAML document whose schema is the default config
// itself. Unknown keys are rejected; `key.path=value` overrides are applied
// after parsing and end up in the resolved snapshot.

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "gcl/concept_model.hpp"
#include "gcl/data.hpp"
#include "gcl/evaluation.hpp"
#include "gcl/trainer.hpp"

namespace gcl {

struct DomainSource {
    std::string images; // idx
    std::string labels; // idx
    std::string root;   // folder
};

enum class DataKind { synthetic, idx, folder };

struct DataConfig {
    DataKind kind = DataKind::synthetic;
    ImageShape image_shape{1, 16, 16};
    std::size_t shots = 3;
    double val_fraction = 0.5;
    std::uint64_t split_seed = 0;
    SynthSpec synthetic;
    DomainSource source;
    DomainSource target;
};

struct ModelConfig {
    Backbone backbone = Backbone::small_conv;
    std::size_t num_concepts = 0; // 0: one concept per class
    std::size_t concept_dim = 1;
    std::size_t conv_width = 8;
    std::size_t hidden = 32;
    double dropout = 0.1;
};

struct EvalConfig {
    ConceptRule rule = ConceptRule::top_k(2); // sized for the default 4-class synthetic task
    std::string checkpoint;
    std::string codebook;
    std::size_t explain_queries = 4;
    std::size_t explain_top_k = 5;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::string init_checkpoint; // encoder initialisation (sca)
    std::string resume_from;     // training state checkpoint
    DataConfig data;
    EvalConfig eval;
    std::vector<Ablation> ablate{Ablation::rce, Ablation::rce_pcg, Ablation::rce_pcg_ccl};
    std::string output_root = "runs";
    bool deterministic = true;

    ModelSpec model_spec(std::size_t num_classes) const;
    void validate() const;
};

// Parses YAML text, applies overrides ("a.b=value"), validates.
RunConfig parse_run_config(const std::string& yaml_text, const std::vector<std::string>& overrides = {});
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

// Fully resolved YAML (every default filled in).
std::string to_yaml(const RunConfig& config);

// FNV-1a 64 of the resolved YAML, as 16 hex digits.
std::string config_hash(const RunConfig& config);

} // namespace gcl
