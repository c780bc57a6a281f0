#include "gcl/prototype_bank.hpp"

#include <algorithm>
#include <fstream>

#include "binary_io.hpp"
#include "gcl/errors.hpp"
#include "gcl/rng.hpp"

namespace gcl {

namespace {

constexpr char kMagic[8] = {'G', 'C', 'L', 'B', 'A', 'N', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

std::vector<std::size_t> draw(const std::vector<std::size_t>& pool, std::size_t count, std::uint64_t seed) {
    auto shuffled = pool;
    Rng rng(seed);
    shuffle(shuffled, rng);
    shuffled.resize(count);
    std::sort(shuffled.begin(), shuffled.end());
    return shuffled;
}

} // namespace

nlohmann::json to_json(const PrototypeSets& sets) {
    return {{"source", sets.source_samples}, {"target", sets.target_samples}};
}

PrototypeSets prototype_sets_from_json(const nlohmann::json& j) {
    PrototypeSets s;
    s.source_samples = j.at("source").get<std::vector<std::vector<std::size_t>>>();
    s.target_samples = j.at("target").get<std::vector<std::vector<std::size_t>>>();
    return s;
}

PrototypeSets sample_prototype_sets(const DomainDataset& source, const DomainDataset& target,
                                    std::size_t per_class_source, std::size_t per_class_target, std::uint64_t seed) {
    if (per_class_source == 0) throw ConfigError("prototype sets need at least one source sample per class");
    const auto src = source.indices_by_class();
    PrototypeSets sets;
    sets.source_samples.resize(source.num_classes);
    sets.target_samples.resize(source.num_classes);
    for (std::size_t c = 0; c < source.num_classes; ++c) {
        if (src[c].size() < per_class_source)
            throw DataError("class " + std::to_string(c) + " has " + std::to_string(src[c].size()) +
                            " source samples; prototype sets need " + std::to_string(per_class_source));
        sets.source_samples[c] = draw(src[c], per_class_source, hash_seed({seed, 0x5005u, c}));
    }
    if (per_class_target > 0) {
        if (target.num_classes != source.num_classes)
            throw DataError("source and target disagree on the number of classes");
        const auto tgt = target.indices_by_class();
        for (std::size_t c = 0; c < source.num_classes; ++c) {
            if (tgt[c].size() < per_class_target)
                throw DataError("class " + std::to_string(c) + " has " + std::to_string(tgt[c].size()) +
                                " target samples; prototype sets need " + std::to_string(per_class_target));
            sets.target_samples[c] = draw(tgt[c], per_class_target, hash_seed({seed, 0x7a76u, c}));
        }
    }
    return sets;
}

std::vector<double> ConceptBank::lookup(std::size_t class_id) const {
    for (std::size_t i = 0; i < class_ids.size(); ++i)
        if (class_ids[i] == class_id) return prototypes[i];
    throw ContractError("concept bank has no prototype for class " + std::to_string(class_id));
}

void ConceptBank::validate() const {
    if (!(mu >= 0.0 && mu <= 1.0)) throw ConfigError("bank mixing weight mu must lie in [0, 1]");
    if (class_ids.size() != prototypes.size()) throw ContractError("bank class ids and prototypes differ in count");
    for (std::size_t i = 0; i < prototypes.size(); ++i) {
        if (prototypes[i].size() != concept_size())
            throw ContractError("prototype for class " + std::to_string(class_ids[i]) + " has wrong length");
        if (!all_finite(prototypes[i]))
            throw DivergenceError("prototype for class " + std::to_string(class_ids[i]) + " is not finite");
    }
}

std::vector<double> mix_prototype(std::span<const std::vector<double>> source,
                                  std::span<const std::vector<double>> target, double mu) {
    if (!(mu >= 0.0 && mu <= 1.0)) throw ConfigError("bank mixing weight mu must lie in [0, 1]");
    if (source.empty()) throw DataError("prototype needs at least one source embedding");
    if (target.empty() && mu < 1.0) throw DataError("prototype needs a target embedding when mu < 1");
    auto mean = [](std::span<const std::vector<double>> rows) {
        std::vector<double> acc(rows.front().size(), 0.0);
        for (const auto& r : rows) {
            if (r.size() != acc.size()) throw ContractError("prototype embeddings differ in length");
            for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += r[k];
        }
        for (auto& v : acc) v /= static_cast<double>(rows.size());
        return acc;
    };
    auto out = mean(source);
    if (target.empty()) return out;
    const auto t = mean(target);
    if (t.size() != out.size()) throw ContractError("source and target embeddings differ in length");
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = mu * out[k] + (1.0 - mu) * t[k];
    return out;
}

ConceptBank make_bank(const ModelSpec& spec, double mu) {
    ConceptBank bank;
    bank.mu = mu;
    bank.num_concepts = spec.num_concepts;
    bank.concept_dim = spec.concept_dim;
    bank.validate();
    return bank;
}

ConceptBank update_bank(const ConceptBank& bank, const ConceptModel& model, const DomainDataset& source,
                        const DomainDataset& target, const PrototypeSets& sets, std::uint64_t step) {
    if (step == 0) throw ContractError("the concept bank is first updated at step 1, not step 0");
    if (sets.source_samples.size() != source.num_classes)
        throw ContractError("prototype sets do not cover every source class");
    auto embed = [&](const DomainDataset& ds, const std::vector<std::size_t>& idx) {
        std::vector<std::vector<double>> rows;
        for (auto i : idx) rows.push_back(model.encode_batch(ds.image(i), 1).data);
        return rows;
    };
    ConceptBank next = bank;
    next.num_concepts = model.spec().num_concepts;
    next.concept_dim = model.spec().concept_dim;
    next.class_ids.clear();
    next.prototypes.clear();
    for (std::size_t c = 0; c < source.num_classes; ++c) {
        const auto src = embed(source, sets.source_samples[c]);
        std::vector<std::vector<double>> tgt;
        // mu == 1 never reads the target encodings.
        if (bank.mu < 1.0) {
            if (c >= sets.target_samples.size() || sets.target_samples[c].empty())
                throw DataError("class " + std::to_string(c) + " has no target prototype samples while mu < 1");
            tgt = embed(target, sets.target_samples[c]);
        }
        next.class_ids.push_back(c);
        next.prototypes.push_back(mix_prototype(src, tgt, bank.mu));
    }
    next.last_update_step = step;
    next.validate();
    return next;
}

void save_bank(const ConceptBank& bank, const std::filesystem::path& path) {
    bank.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(kMagic, sizeof(kMagic));
    binary::put<std::uint32_t>(out, kVersion);
    binary::put<std::uint64_t>(out, bank.prototypes.size());
    binary::put<std::uint64_t>(out, bank.num_concepts);
    binary::put<std::uint64_t>(out, bank.concept_dim);
    binary::put<double>(out, bank.mu);
    binary::put<std::uint64_t>(out, bank.last_update_step);
    binary::put<std::uint32_t>(out, static_cast<std::uint32_t>(bank.config_hash.size()));
    out.write(bank.config_hash.data(), static_cast<std::streamsize>(bank.config_hash.size()));
    for (std::size_t i = 0; i < bank.prototypes.size(); ++i) {
        binary::put<std::uint64_t>(out, bank.class_ids[i]);
        for (double v : bank.prototypes[i]) binary::put<double>(out, v);
    }
    if (!out) throw IoError("failed writing " + path.string());
}

ConceptBank load_bank(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    binary::Reader r(in, path.string());
    if (r.bytes(sizeof(kMagic), "magic") != std::string(kMagic, sizeof(kMagic))) r.fail("bad magic (field: magic)");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kVersion) r.fail("unsupported version " + std::to_string(version) + " (field: version)");
    ConceptBank bank;
    const auto n = r.get<std::uint64_t>("N");
    bank.num_concepts = r.get<std::uint64_t>("K");
    bank.concept_dim = r.get<std::uint64_t>("d");
    bank.mu = r.get<double>("mu");
    if (!(bank.mu >= 0.0 && bank.mu <= 1.0)) r.fail("mu outside [0,1] (field: mu)");
    bank.last_update_step = r.get<std::uint64_t>("step");
    const auto hash_len = r.get<std::uint32_t>("config hash length");
    bank.config_hash = r.bytes(hash_len, "config hash");
    for (std::uint64_t i = 0; i < n; ++i) {
        const auto id = r.get<std::uint64_t>("class id of record " + std::to_string(i));
        std::vector<double> proto(bank.concept_size());
        for (auto& v : proto) v = r.get<double>("prototype record of class " + std::to_string(id));
        bank.class_ids.push_back(id);
        bank.prototypes.push_back(std::move(proto));
    }
    if (!r.at_end()) r.fail("trailing bytes after " + std::to_string(n) + " records");
    try {
        bank.validate();
    } catch (const Error& e) {
        r.fail(e.what());
    }
    return bank;
}

ConceptBank load_bank(const std::filesystem::path& path, std::size_t num_concepts, std::size_t concept_dim) {
    auto bank = load_bank(path);
    if (bank.num_concepts != num_concepts || bank.concept_dim != concept_dim)
        throw FormatError(path.string() + ": codebook has K=" + std::to_string(bank.num_concepts) +
                          ", d=" + std::to_string(bank.concept_dim) + " but K=" + std::to_string(num_concepts) +
                          ", d=" + std::to_string(concept_dim) + " was expected (field: K/d)");
    return bank;
}

} // namespace gcl
