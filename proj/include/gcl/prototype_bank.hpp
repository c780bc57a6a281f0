#pragma once

// Per-class concept prototypes mixed from frozen source and target samples:
//
//   C_c = mu * mean_{x in S_c} F(x) + (1 - mu) * mean_{x in T_c} F(x)
//
// Codebook file layout (little-endian):
//   8 bytes magic "GCLBANK1", u32 version, u64 N, u64 K, u64 d, f64 mu,
//   u64 step, u32 hash length + hash bytes,
//   then N records of (u64 class id, K*d x f64).

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gcl/concept_model.hpp"
#include "gcl/data.hpp"

namespace gcl {

struct PrototypeSets {
    std::vector<std::vector<std::size_t>> source_samples; // per class, indices into the source set
    std::vector<std::vector<std::size_t>> target_samples; // per class, indices into the target set

    bool operator==(const PrototypeSets&) const = default;
};

nlohmann::json to_json(const PrototypeSets& sets);
PrototypeSets prototype_sets_from_json(const nlohmann::json& j);

// Seeded, without replacement per class. per_class_target may be 0 (source
// only banks), in which case `target` is not consulted.
PrototypeSets sample_prototype_sets(const DomainDataset& source, const DomainDataset& target,
                                    std::size_t per_class_source, std::size_t per_class_target, std::uint64_t seed);

struct ConceptBank {
    std::vector<std::size_t> class_ids;
    std::vector<std::vector<double>> prototypes; // aligned with class_ids, length K*d each
    double mu = 0.8;
    std::uint64_t last_update_step = 0;
    std::size_t num_concepts = 0;
    std::size_t concept_dim = 0;
    std::string config_hash;

    bool empty() const noexcept { return prototypes.empty(); }
    std::size_t concept_size() const noexcept { return num_concepts * concept_dim; }

    // Throws ContractError for an unknown class.
    std::vector<double> lookup(std::size_t class_id) const;
    void validate() const;

    bool operator==(const ConceptBank&) const = default;
};

// One class: mu * (sum(source)/|S|) + (1-mu) * (sum(target)/|T|). An empty
// target list is allowed only when mu == 1.
std::vector<double> mix_prototype(std::span<const std::vector<double>> source,
                                  std::span<const std::vector<double>> target, double mu);

// Recomputes every prototype from the current encoder. step must be >= 1.
ConceptBank update_bank(const ConceptBank& bank, const ConceptModel& model, const DomainDataset& source,
                        const DomainDataset& target, const PrototypeSets& sets, std::uint64_t step);

// Empty bank shaped for `spec` (no prototypes yet).
ConceptBank make_bank(const ModelSpec& spec, double mu);

void save_bank(const ConceptBank& bank, const std::filesystem::path& path);
ConceptBank load_bank(const std::filesystem::path& path);
// Also checks the stored K and d.
ConceptBank load_bank(const std::filesystem::path& path, std::size_t num_concepts, std::size_t concept_dim);

} // namespace gcl
