#pragma once

// Binary container for named arrays plus a JSON metadata record.
//
// Layout (all integers little-endian):
//   8 bytes  magic "GCLCKPT1"
//   u32      format version
//   u64      metadata byte length, followed by UTF-8 JSON
//   u64      array count
//   per array: u32 name length, name bytes, u32 rank, rank x u64 dims,
//              numel x f64 (IEEE-754 binary64, little-endian)
//
// Doubles are stored bit-for-bit, so round trips are value-exact.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "gcl/concept_model.hpp"
#include "gcl/tensor.hpp"

namespace gcl {

struct Container {
    nlohmann::json metadata = nlohmann::json::object();
    std::vector<NamedTensor> arrays;

    const Tensor& array(const std::string& name) const;
    bool has_array(const std::string& name) const;
};

void write_container(const std::filesystem::path& path, const Container& container);
Container read_container(const std::filesystem::path& path);

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

// Model checkpoint: parameters under their model names plus metadata
// {"kind":"model", "model_spec":..., "step":..., "config_hash":...}.
void save_model(const std::filesystem::path& path, const ConceptModel& model, std::uint64_t step = 0,
                const std::string& config_hash = {});
ConceptModel load_model(const std::filesystem::path& path);
// Same, but fails with ConfigError when the stored spec differs.
ConceptModel load_model(const std::filesystem::path& path, const ModelSpec& expected);

// Copies parameter values from `source` arrays into `model` (names and shapes
// must match); arrays are looked up as prefix + parameter name.
void assign_parameters(ConceptModel& model, const Container& source, const std::string& prefix = {});

} // namespace gcl
