#include "gcl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "gcl/errors.hpp"
#include "binary_io.hpp"

namespace gcl {

namespace {

using binary::put;
using binary::Reader;

constexpr char kMagic[8] = {'G', 'C', 'L', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

} // namespace

const Tensor& Container::array(const std::string& name) const {
    for (const auto& a : arrays)
        if (a.name == name) return a.value;
    throw FormatError("container has no array named '" + name + "'");
}

bool Container::has_array(const std::string& name) const {
    for (const auto& a : arrays)
        if (a.name == name) return true;
    return false;
}

void write_container(const std::filesystem::path& path, const Container& container) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kVersion);
    const std::string meta = container.metadata.dump();
    put<std::uint64_t>(out, meta.size());
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    put<std::uint64_t>(out, container.arrays.size());
    for (const auto& [name, t] : container.arrays) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape) put<std::uint64_t>(out, d);
        for (double v : t.data) put<double>(out, v);
    }
    if (!out) throw IoError("write failed for " + path.string());
}

Container read_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    Reader r(in, path.string());
    const std::string magic = r.bytes(sizeof(kMagic), "magic");
    if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) r.fail("bad magic (not a checkpoint file)");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kVersion) r.fail("unsupported version " + std::to_string(version));
    Container c;
    const auto meta_len = r.get<std::uint64_t>("metadata length");
    try {
        c.metadata = nlohmann::json::parse(r.bytes(meta_len, "metadata"));
    } catch (const nlohmann::json::exception& e) {
        r.fail(std::string("metadata is not valid JSON: ") + e.what());
    }
    const auto count = r.get<std::uint64_t>("array count");
    for (std::uint64_t i = 0; i < count; ++i) {
        NamedTensor a;
        const auto name_len = r.get<std::uint32_t>("array name length");
        a.name = r.bytes(name_len, "array name");
        const auto rank = r.get<std::uint32_t>("rank of " + a.name);
        Shape shape(rank);
        for (auto& d : shape) d = r.get<std::uint64_t>("dims of " + a.name);
        std::vector<double> data(numel(shape));
        for (auto& v : data) v = r.get<double>("values of " + a.name);
        a.value = Tensor(std::move(shape), std::move(data));
        c.arrays.push_back(std::move(a));
    }
    return c;
}

nlohmann::json to_json(const ModelSpec& spec) {
    return {{"input_shape", spec.input_shape},
            {"num_classes", spec.num_classes},
            {"num_concepts", spec.num_concepts},
            {"concept_dim", spec.concept_dim},
            {"backbone", std::string(to_string(spec.backbone))},
            {"seed", spec.seed},
            {"conv_width", spec.conv_width},
            {"hidden", spec.hidden},
            {"dropout", spec.dropout}};
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
    try {
        ModelSpec s;
        s.input_shape = j.at("input_shape").get<std::array<std::size_t, 3>>();
        s.num_classes = j.at("num_classes").get<std::size_t>();
        s.num_concepts = j.at("num_concepts").get<std::size_t>();
        s.concept_dim = j.at("concept_dim").get<std::size_t>();
        s.backbone = parse_backbone(j.at("backbone").get<std::string>());
        s.seed = j.at("seed").get<std::uint64_t>();
        s.conv_width = j.at("conv_width").get<std::size_t>();
        s.hidden = j.at("hidden").get<std::size_t>();
        s.dropout = j.at("dropout").get<double>();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("invalid model spec record: ") + e.what());
    }
}

void assign_parameters(ConceptModel& model, const Container& source, const std::string& prefix) {
    for (auto& p : model.parameters()) {
        const auto& stored = source.array(prefix + p.name);
        if (stored.shape != p.value.shape)
            throw FormatError("parameter " + p.name + " has shape " + to_string(stored.shape) + ", expected " +
                              to_string(p.value.shape));
        p.value = stored;
    }
}

void save_model(const std::filesystem::path& path, const ConceptModel& model, std::uint64_t step,
                const std::string& config_hash) {
    Container c;
    c.metadata = {{"kind", "model"}, {"model_spec", to_json(model.spec())}, {"step", step},
                  {"config_hash", config_hash}};
    for (const auto& p : model.parameters()) c.arrays.push_back(p);
    write_container(path, c);
}

ConceptModel load_model(const std::filesystem::path& path) {
    const auto c = read_container(path);
    if (c.metadata.value("kind", "") != "model") throw FormatError(path.string() + ": not a model checkpoint");
    ConceptModel model(model_spec_from_json(c.metadata.at("model_spec")));
    assign_parameters(model, c);
    return model;
}

ConceptModel load_model(const std::filesystem::path& path, const ModelSpec& expected) {
    const auto c = read_container(path);
    if (c.metadata.value("kind", "") != "model") throw FormatError(path.string() + ": not a model checkpoint");
    const auto stored = model_spec_from_json(c.metadata.at("model_spec"));
    auto comparable = stored;
    comparable.seed = expected.seed; // init seed and dropout rate do not affect inference
    comparable.dropout = expected.dropout;
    if (!(comparable == expected))
        throw ConfigError("checkpoint " + path.string() + " was built for model spec " +
                          to_json(stored).dump() + ", configuration expects " + to_json(expected).dump());
    ConceptModel model(stored);
    assign_parameters(model, c);
    return model;
}

} // namespace gcl
