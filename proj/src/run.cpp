#include "gcl/run.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <ostream>

#include <fmt/format.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "gcl/checkpoint.hpp"
#include "gcl/errors.hpp"
#include "gcl/evaluation.hpp"

namespace gcl {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Command c) noexcept {
    switch (c) {
    case Command::train: return "train";
    case Command::eval: return "eval";
    case Command::fidelity: return "fidelity";
    case Command::explain: return "explain";
    case Command::ablate: return "ablate";
    }
    return "train";
}

Command parse_command(std::string_view name) {
    for (auto c : {Command::train, Command::eval, Command::fidelity, Command::explain, Command::ablate})
        if (to_string(c) == name) return c;
    throw ConfigError(fmt::format("unknown command '{}' (expected train, eval, fidelity, explain or ablate)", name));
}

int exit_code_for(const std::exception& e) noexcept {
    if (dynamic_cast<const ConfigError*>(&e)) return exit_config;
    if (dynamic_cast<const DataError*>(&e)) return exit_data;
    if (dynamic_cast<const DivergenceError*>(&e) || dynamic_cast<const DegenerateEmbeddingError*>(&e))
        return exit_divergence;
    if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e)) return exit_io;
    return exit_other;
}

RunConfig resolve_config(const RunOptions& options) {
    auto overrides = options.overrides;
    if (options.deterministic) overrides.push_back("deterministic=true");
    if (!options.out.empty()) {
        overrides.push_back("output.root=" + options.out);
    } else if (const char* env = std::getenv("GCL_OUTPUT_ROOT"); env && *env) {
        overrides.push_back(std::string("output.root=") + env);
    }
    return options.config_path.empty() ? parse_run_config("", overrides)
                                       : load_run_config(options.config_path, overrides);
}

namespace {

DomainDataset fit_shape(DomainDataset ds, const ImageShape& shape, const std::string& what) {
    if (ds.image_shape[0] != shape[0])
        throw DataError(fmt::format("{} has {} channel(s) but data.image_shape asks for {}", what, ds.image_shape[0],
                                    shape[0]));
    if (ds.image_shape != shape) ds = resize(ds, shape[1], shape[2]);
    return ds;
}

DomainDataset load_domain(const DataConfig& d, const DomainSource& src, const std::string& role) {
    DomainDataset ds = d.kind == DataKind::idx ? load_idx(src.images, src.labels)
                                               : load_image_folder(src.root, d.image_shape);
    ds.domain_tag = role;
    return fit_shape(std::move(ds), d.image_shape, role);
}

ExperimentData load_experiment(const RunConfig& c) {
    DomainDataset source;
    DomainDataset target;
    if (c.data.kind == DataKind::synthetic) {
        std::tie(source, target) = synth_two_domain(c.data.synthetic);
    } else {
        source = load_domain(c.data, c.data.source, "source");
        target = load_domain(c.data, c.data.target, "target");
    }
    if (source.num_classes != target.num_classes)
        throw DataError(fmt::format("source has {} classes but target has {}", source.num_classes, target.num_classes));
    source.validate();
    target.validate();
    return make_experiment(std::move(source), target, c.data.shots, c.data.val_fraction, c.data.split_seed);
}

DomainDataset pooled_training_set(const TrainData& data) {
    DomainDataset pool = data.source;
    for (std::size_t i = 0; i < data.target.size(); ++i) pool.push_back(data.target.image(i), data.target.labels[i]);
    return pool;
}

std::string timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    localtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
    return buf;
}

fs::path make_run_dir(const fs::path& root, Command command) {
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw IoError(fmt::format("cannot create output root {}: {}", root.string(), ec.message()));
    const auto base = fmt::format("{}-{}", to_string(command), timestamp());
    for (int n = 0;; ++n) {
        const auto dir = root / (n == 0 ? base : fmt::format("{}-{}", base, n));
        if (fs::create_directory(dir, ec)) return dir;
        if (ec) throw IoError(fmt::format("cannot create run directory {}: {}", dir.string(), ec.message()));
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

class JsonLines {
public:
    explicit JsonLines(const fs::path& path) : path_(path), out_(path, std::ios::binary) {
        if (!out_) throw IoError("cannot write " + path.string());
    }
    void write(const json& j) {
        out_ << j.dump() << '\n';
        out_.flush();
        if (!out_) throw IoError("write failed for " + path_.string());
    }

private:
    fs::path path_;
    std::ofstream out_;
};

// Row of images separated by a 2 px gap, 8-bit, written as PNG.
void write_image_row(const fs::path& path, const std::vector<std::span<const double>>& images,
                     const ImageShape& shape) {
    const int c = static_cast<int>(shape[0]);
    const int h = static_cast<int>(shape[1]);
    const int w = static_cast<int>(shape[2]);
    constexpr int gap = 2;
    const int n = static_cast<int>(images.size());
    cv::Mat grid(h, n * w + (n - 1) * gap, c == 3 ? CV_8UC3 : CV_8UC1, cv::Scalar::all(255));
    for (int i = 0; i < n; ++i) {
        const auto& img = images[static_cast<std::size_t>(i)];
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int gx = i * (w + gap) + x;
                auto px = [&](int ch) {
                    const double v = img[static_cast<std::size_t>((ch * h + y) * w + x)];
                    return cv::saturate_cast<std::uint8_t>(v * 255.0 + 0.5);
                };
                if (c == 3) grid.at<cv::Vec3b>(y, gx) = {px(2), px(1), px(0)};
                else grid.at<std::uint8_t>(y, gx) = px(0);
            }
    }
    bool ok = false;
    try {
        ok = cv::imwrite(path.string(), grid);
    } catch (const cv::Exception& e) {
        throw IoError("cannot write " + path.string() + ": " + e.what());
    }
    if (!ok) throw IoError("cannot write " + path.string());
}

json summary_of(const ConceptModel& model, const ExperimentData& ex, const RunConfig& c) {
    const auto& w = c.train.weights;
    const auto fid = fidelity_score(model, ex.test, c.eval.rule);
    return {{"target_test_accuracy", accuracy(model, ex.test, w.omega1, w.omega2)},
            {"target_val_accuracy", ex.train.val.empty() ? 0.0 : accuracy(model, ex.train.val, w.omega1, w.omega2)},
            {"source_accuracy", accuracy(model, ex.train.source, w.omega1, w.omega2)},
            {"fidelity", to_json(fid)}};
}

TrainState initial_state(const RunConfig& c, const ModelSpec& spec, const TrainData& data) {
    if (!c.resume_from.empty()) {
        auto state = load_state(c.resume_from);
        if (state.model.spec() != spec)
            throw ConfigError("train.resume_from holds a state for a different model spec");
        return state;
    }
    ConceptModel model(spec);
    if (!c.init_checkpoint.empty()) {
        const auto init = read_container(c.init_checkpoint);
        const auto stored = model_spec_from_json(init.metadata.at("model_spec"));
        if (stored.num_concepts != spec.num_concepts || stored.concept_dim != spec.concept_dim ||
            stored.input_shape != spec.input_shape || stored.backbone != spec.backbone ||
            stored.conv_width != spec.conv_width || stored.hidden != spec.hidden)
            throw ConfigError("train.init_checkpoint was trained with an incompatible concept encoder");
        for (auto& p : model.parameters())
            if (p.name.starts_with("F.")) p.value = init.array(p.name);
    }
    return init_state(std::move(model), data, c.train);
}

void command_train(const RunConfig& c, const ModelSpec& spec, const ExperimentData& ex, const fs::path& dir,
                   std::ostream& log) {
    JsonLines metrics(dir / "metrics.jsonl");
    const auto hash = config_hash(c);
    TrainCallbacks cb;
    cb.on_step = [&](const StepRecord& r) {
        auto j = to_json(r);
        j["event"] = "step";
        metrics.write(j);
    };
    cb.on_eval = [&](const EvalRecord& e) {
        metrics.write({{"event", "eval"}, {"step", e.step}, {"val_accuracy", e.val_accuracy}});
        log << fmt::format("step {:>6}  val accuracy {:.4f}\n", e.step, e.val_accuracy) << std::flush;
    };
    cb.on_checkpoint = [&](const TrainState& s) { save_state(dir / "state.ckpt", s, hash); };

    auto result = train(c.train, initial_state(c, spec, ex.train), ex.train, cb);
    save_model(dir / "best_model.ckpt", result.model, result.best_step, hash);
    if (!result.bank.empty()) save_bank(result.bank, dir / "codebook.bin");

    auto summary = summary_of(result.model, ex, c);
    summary["best_val"] = result.best_val;
    summary["best_step"] = result.best_step;
    summary["steps_run"] = result.steps_run;
    summary["stopped_early"] = result.stopped_early;
    summary["config_hash"] = hash;
    write_json(dir / "summary.json", summary);
    log << fmt::format("target test accuracy {:.4f}, fidelity {:.4f}\n",
                       summary["target_test_accuracy"].get<double>(),
                       summary["fidelity"]["overall"].get<double>());
}

ConceptModel checkpoint_for(const RunConfig& c, const ModelSpec& spec) {
    if (c.eval.checkpoint.empty()) throw ConfigError("eval.checkpoint is required for this command");
    return load_model(c.eval.checkpoint, spec);
}

void command_eval(const RunConfig& c, const ConceptModel& model, const ExperimentData& ex, const fs::path& dir,
                  std::ostream& log) {
    auto results = summary_of(model, ex, c);
    if (!c.eval.codebook.empty()) {
        const auto bank = load_bank(c.eval.codebook, model.spec().num_concepts, model.spec().concept_dim);
        results["codebook"] = {{"classes", bank.class_ids.size()}, {"mu", bank.mu}, {"step", bank.last_update_step}};
    }
    write_json(dir / "results.json", results);
    log << fmt::format("target test accuracy {:.4f}\n", results["target_test_accuracy"].get<double>());
}

void command_fidelity(const RunConfig& c, const ConceptModel& model, const ExperimentData& ex, const fs::path& dir,
                      std::ostream& log) {
    const auto report = fidelity_score(model, ex.test, c.eval.rule);
    write_json(dir / "fidelity.json", to_json(report));
    log << fmt::format("fidelity {:.4f} over {} pairs\n", report.overall, report.pairs);
}

void command_explain(const RunConfig& c, const ConceptModel& model, const ExperimentData& ex, const fs::path& dir,
                     std::ostream& log) {
    const auto pool = pooled_training_set(ex.train);
    const auto pool_importance = importance_matrix(model, pool);
    const std::size_t k = std::min(c.eval.explain_top_k, pool.size());
    // Queries cycle through the classes: first sample of each, then the second...
    std::vector<std::size_t> picks;
    const auto by_class = ex.test.indices_by_class();
    for (std::size_t round = 0; picks.size() < std::min(c.eval.explain_queries, ex.test.size()); ++round)
        for (const auto& members : by_class)
            if (round < members.size() && picks.size() < c.eval.explain_queries) picks.push_back(members[round]);
    json out = json::array();
    for (std::size_t q : picks) {
        const auto x = ex.test.image(q);
        const auto out_q = model.forward(x);
        const auto importance = concept_importance(out_q.concepts.data, out_q.relevances.data,
                                                   model.spec().num_concepts, model.spec().concept_dim);
        auto e = explain_from_importance(importance, pool_importance, k);
        std::vector<std::span<const double>> row{x};
        for (auto i : e.prototype_indices) row.push_back(pool.image(i));
        const auto png = fmt::format("query{:03d}.png", q);
        write_image_row(dir / png, row, pool.image_shape);
        auto j = to_json(e);
        j["test_index"] = q;
        j["label"] = ex.test.labels[q];
        j["image"] = png;
        out.push_back(j);
        log << fmt::format("query {} (label {}): concept {}\n", q, ex.test.labels[q], e.top_concept);
    }
    write_json(dir / "explanations.json", out);
}

void command_ablate(const RunConfig& c, const ModelSpec& spec, const ExperimentData& ex, const fs::path& dir,
                    std::ostream& log) {
    std::vector<AblationSetting> settings;
    for (auto a : c.ablate) {
        auto cfg = c.train;
        cfg.ablation = a;
        settings.push_back({std::string(to_string(a)), cfg});
    }
    const auto table = ablate(settings, spec, ex.train, ex.test, c.eval.rule);
    write_json(dir / "ablation.json", table.to_json());
    write_text(dir / "ablation.txt", table.to_text());
    log << table.to_text();
}

} // namespace

RunOutcome run(const RunOptions& options, std::ostream& log) {
    RunOutcome outcome;
    try {
        const auto config = resolve_config(options);
        const auto ex = load_experiment(config);
        const auto spec = config.model_spec(ex.train.source.num_classes);
        spec.validate();
        ex.train.validate(spec);

        // Everything that can be checked before compute is checked before
        // the run directory exists.
        std::optional<ConceptModel> model;
        if (options.command == Command::eval || options.command == Command::fidelity ||
            options.command == Command::explain)
            model = checkpoint_for(config, spec);
        if (!config.eval.codebook.empty() && options.command == Command::eval)
            load_bank(config.eval.codebook, spec.num_concepts, spec.concept_dim);
        if (options.command == Command::train) initial_state(config, spec, ex.train);
        try {
            config.eval.rule.validate(spec.num_concepts);
        } catch (const ContractError& e) {
            throw ConfigError(std::string("eval rule: ") + e.what());
        }

        const auto dir = make_run_dir(config.output_root, options.command);
        outcome.run_dir = dir;
        write_text(dir / "config.yaml", to_yaml(config));
        log << fmt::format("{} -> {}\n", to_string(options.command), dir.string());

        switch (options.command) {
        case Command::train: command_train(config, spec, ex, dir, log); break;
        case Command::eval: command_eval(config, *model, ex, dir, log); break;
        case Command::fidelity: command_fidelity(config, *model, ex, dir, log); break;
        case Command::explain: command_explain(config, *model, ex, dir, log); break;
        case Command::ablate: command_ablate(config, spec, ex, dir, log); break;
        }
    } catch (const std::exception& e) {
        outcome.exit_code = exit_code_for(e);
        outcome.error = e.what();
        if (outcome.exit_code == exit_config && outcome.run_dir) {
            std::error_code ec;
            fs::remove_all(*outcome.run_dir, ec);
            outcome.run_dir.reset();
        }
    }
    return outcome;
}

} // namespace gcl
