#include "gcl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gcl/checkpoint.hpp"
#include "gcl/errors.hpp"
#include "gcl/evaluation.hpp"
#include "gcl/rng.hpp"

namespace gcl {

namespace {

constexpr std::uint64_t kBatchTag = 0xba7c;
constexpr std::uint64_t kDropoutTag = 0xd0;
constexpr std::uint64_t kViewDropoutTag = 0xd1;

} // namespace

TrainConfig TrainConfig::digit() { return {}; }

TrainConfig TrainConfig::object() {
    TrainConfig c;
    c.weights.omega1 = 0.8;
    c.weights.omega2 = 0.2;
    c.weights.beta = 0.5;
    return c;
}

void TrainConfig::validate() const {
    weights.validate();
    augmentation.validate();
    if (!(mu >= 0.0 && mu <= 1.0)) throw ConfigError("mu must lie in [0, 1]");
    if (!(lr0 >= 0.0)) throw ConfigError("lr0 must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (uses_ccl(ablation) && batch_size < 2) throw ConfigError("contrastive training needs batch_size >= 2");
    if (!(target_fraction >= 0.0 && target_fraction < 1.0)) throw ConfigError("target_fraction must lie in [0, 1)");
    if (eval_interval == 0) throw ConfigError("eval_interval must be >= 1");
    if (early_stop_patience == 0) throw ConfigError("early_stop_patience must be >= 1");
    if (prototypes_source == 0) throw ConfigError("prototypes_source must be >= 1");
    if (uses_pcg(ablation) && mu < 1.0 && prototypes_target == 0)
        throw ConfigError("prototypes_target must be >= 1 when mu < 1");
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"weights", to_json(c.weights)},
            {"mu", c.mu},
            {"lr0", c.lr0},
            {"momentum", c.momentum},
            {"max_steps", c.max_steps},
            {"batch_size", c.batch_size},
            {"target_fraction", c.target_fraction},
            {"eval_interval", c.eval_interval},
            {"early_stop_patience", c.early_stop_patience},
            {"ablation", std::string(to_string(c.ablation))},
            {"seed", c.seed},
            {"augmentation", to_json(c.augmentation)},
            {"prototypes_source", c.prototypes_source},
            {"prototypes_target", c.prototypes_target},
            {"prototype_gradients", c.prototype_gradients},
            {"deterministic", c.deterministic}};
}

double cosine_lr(double lr0, std::size_t step, std::size_t max_steps) {
    if (max_steps == 0) return lr0;
    const double t = static_cast<double>(std::min(step, max_steps)) / static_cast<double>(max_steps);
    return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

void TrainData::validate(const ModelSpec& spec) const {
    const ImageShape shape{spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]};
    auto check = [&](const DomainDataset& ds, const char* role) {
        if (ds.empty()) return;
        if (ds.image_shape != shape)
            throw DataError(std::string(role) + " images do not match the model input shape");
        if (ds.num_classes != spec.num_classes)
            throw DataError(std::string(role) + " declares " + std::to_string(ds.num_classes) +
                            " classes, the model expects " + std::to_string(spec.num_classes));
        ds.validate();
    };
    if (source.empty()) throw DataError("training needs a non-empty source set");
    check(source, "source");
    check(target, "target");
    check(val, "validation");
    const auto by_class = source.indices_by_class();
    for (std::size_t c = 0; c < by_class.size(); ++c)
        if (by_class[c].empty()) throw DataError("class " + std::to_string(c) + " is absent from the source set");
}

ExperimentData make_experiment(DomainDataset source, const DomainDataset& target, std::size_t shots,
                               double val_fraction, std::uint64_t seed) {
    ExperimentData out;
    auto [few, rest] = few_shot_split(target, shots, hash_seed({seed, 0xf3u}));
    auto [val, test] = stratified_split(rest, val_fraction, hash_seed({seed, 0x7e57u}));
    source.split = Split::train;
    val.split = Split::val;
    test.split = Split::test;
    out.train = {std::move(source), std::move(few), std::move(val)};
    out.test = std::move(test);
    return out;
}

Batch sample_batch(const TrainData& data, const TrainConfig& config, std::uint64_t step) {
    const std::size_t ns_pool = data.source.size();
    const std::size_t nt_pool = data.target.size();
    if (ns_pool + nt_pool == 0) throw ContractError("cannot sample a batch from empty data");
    std::size_t nt = 0;
    if (nt_pool > 0) {
        const double share =
            config.target_fraction > 0.0
                ? config.target_fraction * static_cast<double>(config.batch_size)
                : static_cast<double>(config.batch_size * nt_pool) / static_cast<double>(ns_pool + nt_pool);
        nt = std::min(nt_pool, std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(share))));
    }
    const std::size_t ns = std::min(ns_pool, config.batch_size - std::min(nt, config.batch_size));

    Rng rng(hash_seed({config.seed, step, kBatchTag}));
    auto pick = [&rng](std::size_t pool, std::size_t count) {
        // partial Fisher-Yates over [0, pool)
        std::vector<std::size_t> idx(pool);
        for (std::size_t i = 0; i < pool; ++i) idx[i] = i;
        for (std::size_t i = 0; i < count; ++i) {
            const auto j = i + static_cast<std::size_t>(rng.below(pool - i));
            std::swap(idx[i], idx[j]);
        }
        idx.resize(count);
        return idx;
    };
    Batch b;
    for (auto i : pick(ns_pool, ns)) {
        const auto img = data.source.image(i);
        b.images.insert(b.images.end(), img.begin(), img.end());
        b.labels.push_back(data.source.labels[i]);
        b.ids.push_back(i);
    }
    for (auto i : pick(nt_pool, nt)) {
        const auto img = data.target.image(i);
        b.images.insert(b.images.end(), img.begin(), img.end());
        b.labels.push_back(data.target.labels[i]);
        b.ids.push_back(ns_pool + i);
    }
    return b;
}

std::vector<std::size_t> negative_partners(std::span<const std::size_t> labels) {
    const std::size_t n = labels.size();
    if (n < 2) throw ContractError("negatives need at least two samples in the batch");
    std::vector<std::size_t> partner(n);
    for (std::size_t i = 0; i < n; ++i) {
        partner[i] = (i + 1) % n;
        for (std::size_t o = 1; o < n; ++o) {
            const std::size_t j = (i + o) % n;
            if (labels[j] != labels[i]) {
                partner[i] = j;
                break;
            }
        }
    }
    return partner;
}

TrainState init_state(ConceptModel model, const TrainData& data, const TrainConfig& config) {
    config.validate();
    data.validate(model.spec());
    TrainState state(std::move(model));
    for (const auto& p : state.model.parameters()) state.velocity.emplace_back(p.value.shape);
    const bool source_only = config.ablation == Ablation::sca || config.mu == 1.0;
    state.bank = make_bank(state.model.spec(), config.ablation == Ablation::sca ? 1.0 : config.mu);
    if (uses_pcg(config.ablation) || uses_codebook(config.ablation))
        state.sets = sample_prototype_sets(data.source, data.target, config.prototypes_source,
                                           source_only ? 0 : config.prototypes_target, config.seed);
    return state;
}

namespace {

Tensor stack_prototypes(const ConceptBank& bank, std::span<const std::size_t> labels) {
    Tensor t({labels.size(), bank.concept_size()});
    for (std::size_t r = 0; r < labels.size(); ++r) {
        const auto p = bank.lookup(labels[r]);
        std::copy(p.begin(), p.end(), t.data.begin() + static_cast<std::ptrdiff_t>(r * p.size()));
    }
    return t;
}

// Prototypes for every batch row, kept on the tape so gradients reach F.
Var differentiable_prototypes(const ConceptModel& model, std::span<const Var> bound, const TrainData& data,
                              const PrototypeSets& sets, double mu, std::span<const std::size_t> labels) {
    Tape& tape = bound.front().tape();
    const auto [c, h, w] = model.spec().input_shape;
    auto encode_rows = [&](const DomainDataset& ds, const std::vector<std::size_t>& idx) {
        std::vector<double> flat;
        for (auto i : idx) {
            const auto img = ds.image(i);
            flat.insert(flat.end(), img.begin(), img.end());
        }
        return model.encode(bound, tape.constant(Tensor({idx.size(), c, h, w}, std::move(flat))), {});
    };
    std::vector<Var> per_class;
    for (std::size_t k = 0; k < sets.source_samples.size(); ++k) {
        Var proto = ops::scale(ops::mean_rows(encode_rows(data.source, sets.source_samples[k])), mu);
        if (mu < 1.0)
            proto = ops::add(proto,
                             ops::scale(ops::mean_rows(encode_rows(data.target, sets.target_samples[k])), 1.0 - mu));
        per_class.push_back(proto);
    }
    return ops::gather_rows(ops::concat_rows(per_class), labels);
}

} // namespace

StepGraph build_step_graph(const ConceptModel& model, std::span<const Var> bound, const Batch& batch,
                           const TrainData& data, const PrototypeSets& sets, const ConceptBank& bank,
                           const TrainConfig& config, std::uint64_t step) {
    if (batch.size() == 0) throw ContractError("train step needs a non-empty batch");
    const auto& spec = model.spec();
    const auto [c, h, w] = spec.input_shape;
    const std::size_t B = batch.size();
    const auto& wts = config.weights;
    Tape& tape = bound.front().tape();

    Var x = tape.constant(Tensor({B, c, h, w}, batch.images));
    const auto heads = model.forward(bound, x, {true, hash_seed({config.seed, step, kDropoutTag})});

    StepGraph g;
    g.pred = terms::prediction(ConceptModel::scores(heads, wts.omega1, wts.omega2), batch.labels);
    g.rec = terms::reconstruction_sparsity(x, heads.reconstruction, heads.concepts, wts.lambda);

    if (uses_ccl(config.ablation)) {
        const std::size_t P = config.augmentation.views_per_set;
        const ImageShape shape{c, h, w};
        std::vector<double> views;
        views.reserve(B * P * spec.input_size());
        for (std::size_t i = 0; i < B; ++i) {
            const auto img = std::span<const double>(batch.images).subspan(i * spec.input_size(), spec.input_size());
            for (std::size_t v = 0; v < P; ++v) {
                const auto view =
                    make_view(img, shape, config.augmentation, view_seed(config.seed, step, batch.ids[i], v));
                views.insert(views.end(), view.begin(), view.end());
            }
        }
        Var view_concepts = model.encode(bound, tape.constant(Tensor({B * P, c, h, w}, std::move(views))),
                                         {true, hash_seed({config.seed, step, kViewDropoutTag})});
        const auto partner = negative_partners(batch.labels);
        std::vector<std::size_t> neg_rows;
        for (std::size_t i = 0; i < B; ++i)
            for (std::size_t v = 0; v < P; ++v) neg_rows.push_back(partner[i] * P + v);
        g.ssl = terms::contrastive(heads.concepts, view_concepts, ops::gather_rows(view_concepts, neg_rows), P, P,
                                   wts.tau, wts.similarity);
    }

    if (uses_pcg(config.ablation)) {
        if (step >= 1) {
            Var protos = config.prototype_gradients
                             ? differentiable_prototypes(model, bound, data, sets, bank.mu, batch.labels)
                             : tape.constant(stack_prototypes(bank, batch.labels));
            g.grnd = terms::grounding(heads.concepts, protos);
        }
        g.fid = terms::fidelity(heads.concepts, batch.labels);
    }

    if (uses_codebook(config.ablation) && step >= 1)
        g.codebook = terms::codebook(heads.concepts, tape.constant(stack_prototypes(bank, batch.labels)),
                                     wts.epsilon);

    if (config.ablation == Ablation::sca) {
        g.total = ops::add(g.pred, ops::scale(g.rec, wts.xi));
        if (g.ssl) g.total = ops::add(g.total, ops::scale(*g.ssl, wts.alpha));
        if (g.codebook) g.total = ops::add(g.total, *g.codebook);
    } else {
        g.total = ops::add(g.pred, g.rec);
        std::optional<Var> cl;
        auto accumulate = [&cl](Var term) { cl = cl ? ops::add(*cl, term) : term; };
        if (g.ssl) accumulate(*g.ssl);
        if (g.grnd) accumulate(ops::scale(*g.grnd, wts.lambda1));
        if (g.fid) accumulate(ops::scale(*g.fid, wts.lambda2));
        if (cl) g.total = ops::add(g.total, ops::scale(*cl, wts.beta));
    }
    return g;
}

LossBreakdown train_step(TrainState& state, const Batch& batch, const TrainData& data, const TrainConfig& config) {
    if (batch.size() == 0) throw ContractError("train_step needs a non-empty batch");
    const std::uint64_t step = state.step;
    const auto& wts = config.weights;
    const double lr = cosine_lr(config.lr0, step, config.max_steps);

    if (uses_pcg(config.ablation) && step >= 1)
        state.bank = update_bank(state.bank, state.model, data.source, data.target, state.sets, step);
    // Source-only codebook, computed once and then frozen.
    if (uses_codebook(config.ablation) && step >= 1 && state.bank.empty())
        state.bank = update_bank(state.bank, state.model, data.source, data.target, state.sets, step);

    Tape tape;
    const auto bound = state.model.bind(tape, true);
    const auto g = build_step_graph(state.model, bound, batch, data, state.sets, state.bank, config, step);
    const Var& total = g.total;
    const Var& pred = g.pred;
    const Var& rec = g.rec;
    const auto& ssl = g.ssl;
    const auto& grnd = g.grnd;
    const auto& fid = g.fid;
    const auto& codebook = g.codebook;

    LossBreakdown terms_value;
    terms_value.pred = pred.item();
    terms_value.rec = rec.item();
    if (ssl) terms_value.ssl = ssl->item();
    if (grnd) terms_value.grnd = grnd->item();
    if (fid) terms_value.fid = fid->item();
    if (codebook) terms_value.codebook = codebook->item();
    auto breakdown = compose(terms_value, wts, config.ablation);
    breakdown.total = total.item();
    if (!std::isfinite(breakdown.total))
        throw DivergenceError("non-finite loss at step " + std::to_string(step) + ": " + to_json(breakdown).dump());

    tape.backward(total);
    auto params = state.model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor g = tape.grad(bound[i]);
        auto& v = state.velocity[i].data;
        auto& p = params[i].value.data;
        for (std::size_t k = 0; k < p.size(); ++k) {
            v[k] = config.momentum * v[k] + g[k];
            p[k] -= lr * v[k];
        }
    }
    state.model.check_finite();
    state.step = step + 1;
    return breakdown;
}

nlohmann::json to_json(const StepRecord& r) {
    auto j = to_json(r.loss);
    j["step"] = r.step;
    j["lr"] = r.lr;
    return j;
}

// ---------------------------------------------------------------------------
// State persistence

void save_state(const std::filesystem::path& path, const TrainState& state, const std::string& config_hash) {
    Container ct;
    ct.metadata = {{"kind", "train_state"},
                   {"model_spec", to_json(state.model.spec())},
                   {"step", state.step},
                   {"best_val", std::isfinite(state.best_val) ? nlohmann::json(state.best_val) : nlohmann::json()},
                   {"best_step", state.best_step},
                   {"patience_counter", state.patience_counter},
                   {"stopped", state.stopped},
                   {"config_hash", config_hash},
                   {"sets", to_json(state.sets)},
                   {"bank",
                    {{"mu", state.bank.mu},
                     {"last_update_step", state.bank.last_update_step},
                     {"class_ids", state.bank.class_ids},
                     {"num_concepts", state.bank.num_concepts},
                     {"concept_dim", state.bank.concept_dim},
                     {"config_hash", state.bank.config_hash}}}};
    const auto params = state.model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        ct.arrays.push_back({"param/" + params[i].name, params[i].value});
        ct.arrays.push_back({"velocity/" + params[i].name, state.velocity[i]});
    }
    for (const auto& p : state.best_params) ct.arrays.push_back({"best/" + p.name, p.value});
    for (std::size_t i = 0; i < state.bank.prototypes.size(); ++i)
        ct.arrays.push_back({"bank/" + std::to_string(i),
                             Tensor({state.bank.prototypes[i].size()}, state.bank.prototypes[i])});
    write_container(path, ct);
}

TrainState load_state(const std::filesystem::path& path) {
    const auto ct = read_container(path);
    try {
        if (ct.metadata.at("kind") != "train_state") throw FormatError(path.string() + ": not a training state file");
        ConceptModel model(model_spec_from_json(ct.metadata.at("model_spec")));
        assign_parameters(model, ct, "param/");
        TrainState state(std::move(model));
        for (const auto& p : state.model.parameters()) {
            const auto& v = ct.array("velocity/" + p.name);
            if (v.shape != p.value.shape) throw FormatError(path.string() + ": velocity shape mismatch for " + p.name);
            state.velocity.push_back(v);
            if (ct.has_array("best/" + p.name)) state.best_params.push_back({p.name, ct.array("best/" + p.name)});
        }
        const auto& m = ct.metadata;
        state.step = m.at("step").get<std::uint64_t>();
        state.best_val = m.at("best_val").is_null() ? -std::numeric_limits<double>::infinity()
                                                    : m.at("best_val").get<double>();
        state.best_step = m.at("best_step").get<std::uint64_t>();
        state.patience_counter = m.at("patience_counter").get<std::size_t>();
        state.stopped = m.at("stopped").get<bool>();
        state.sets = prototype_sets_from_json(m.at("sets"));
        const auto& b = m.at("bank");
        state.bank.mu = b.at("mu").get<double>();
        state.bank.last_update_step = b.at("last_update_step").get<std::uint64_t>();
        state.bank.class_ids = b.at("class_ids").get<std::vector<std::size_t>>();
        state.bank.num_concepts = b.at("num_concepts").get<std::size_t>();
        state.bank.concept_dim = b.at("concept_dim").get<std::size_t>();
        state.bank.config_hash = b.at("config_hash").get<std::string>();
        for (std::size_t i = 0; i < state.bank.class_ids.size(); ++i)
            state.bank.prototypes.push_back(ct.array("bank/" + std::to_string(i)).data);
        state.bank.validate();
        return state;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": malformed training state metadata (" + e.what() + ")");
    }
}

// ---------------------------------------------------------------------------
// Training loop

TrainResult train(const TrainConfig& config, const ModelSpec& spec, const TrainData& data,
                  const TrainCallbacks& callbacks) {
    return train(config, init_state(ConceptModel(spec), data, config), data, callbacks);
}

TrainResult train(const TrainConfig& config, TrainState state, const TrainData& data,
                  const TrainCallbacks& callbacks) {
    config.validate();
    data.validate(state.model.spec());
    TrainResult result{state.model, state.bank, {}, {}, state.best_val, state.best_step, 0, state.stopped};
    const auto& wts = config.weights;

    while (state.step < config.max_steps && !state.stopped) {
        const std::uint64_t step = state.step;
        const double lr = cosine_lr(config.lr0, step, config.max_steps);
        const auto batch = sample_batch(data, config, step);
        const StepRecord record{step, lr, train_step(state, batch, data, config)};
        result.history.push_back(record);
        if (callbacks.on_step) callbacks.on_step(record);

        const bool eval_now = (step + 1) % config.eval_interval == 0 || step + 1 == config.max_steps;
        if (eval_now && !data.val.empty()) {
            const double acc = accuracy(state.model, data.val, wts.omega1, wts.omega2);
            const EvalRecord ev{step, acc};
            result.evals.push_back(ev);
            if (callbacks.on_eval) callbacks.on_eval(ev);
            if (acc > state.best_val) {
                state.best_val = acc;
                state.best_step = step;
                state.patience_counter = 0;
                state.best_params.assign(state.model.parameters().begin(), state.model.parameters().end());
            } else if (++state.patience_counter >= config.early_stop_patience) {
                state.stopped = true;
            }
        }
        if (eval_now && callbacks.on_checkpoint) callbacks.on_checkpoint(state);
    }

    result.model = state.model;
    if (!state.best_params.empty()) {
        auto params = result.model.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) params[i].value = state.best_params[i].value;
    }
    result.bank = state.bank;
    result.best_val = state.best_val;
    result.best_step = state.best_step;
    result.steps_run = result.history.size();
    result.stopped_early = state.stopped;
    return result;
}

} // namespace gcl
