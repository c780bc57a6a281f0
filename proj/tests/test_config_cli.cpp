#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gcl/checkpoint.hpp"
#include "gcl/config.hpp"
#include "gcl/errors.hpp"
#include "gcl/run.hpp"
#include "support.hpp"

using namespace gcl;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kTiny{
    "data.synthetic.samples_per_class=12", "model.conv_width=2", "model.hidden=4",
    "train.max_steps=20",                  "train.batch_size=8", "train.eval_interval=10",
    "augmentation.kind=crop_rotate"};

RunOptions tiny(Command c, const std::string& out, std::vector<std::string> extra = {}) {
    RunOptions o;
    o.command = c;
    o.out = out;
    o.overrides = kTiny;
    o.overrides.insert(o.overrides.end(), extra.begin(), extra.end());
    return o;
}

std::size_t entries(const std::string& dir) {
    if (!fs::exists(dir)) return 0;
    return static_cast<std::size_t>(std::distance(fs::directory_iterator(dir), fs::directory_iterator{}));
}

nlohmann::json read_json(const fs::path& p) {
    std::ifstream in(p);
    return nlohmann::json::parse(in);
}

} // namespace

TEST_CASE("config parsing") {
    const auto c = parse_run_config("train:\n  tau: 0.25\nmodel:\n  hidden: 7\n", {"train.beta=0.5"});
    CHECK(c.train.weights.tau == 0.25);
    CHECK(c.model.hidden == 7);
    CHECK(c.train.weights.beta == 0.5);
    CHECK(c.train.weights.lambda == 1e-5);
    CHECK(c.train.momentum == 0.9);

    CHECK_THROWS_AS(parse_run_config("train:\n  temperature: 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("", {"train.nope=1"}), ConfigError);
    CHECK_THROWS_AS(parse_run_config("", {"train.tau=0"}), ConfigError);
    CHECK_THROWS_AS(parse_run_config("", {"train.tau"}), ConfigError);
    CHECK_THROWS_AS(parse_run_config("train: [1, 2\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("", {"eval.rule=threshold", "eval.gamma=1.5"}), ConfigError);
}

TEST_CASE("resolved yaml round trips and records overrides") {
    const auto c = parse_run_config("", {"train.seed=9", "eval.rule=threshold", "eval.gamma=0.3"});
    const auto yaml = to_yaml(c);
    const auto back = parse_run_config(yaml);
    CHECK(to_yaml(back) == yaml);
    CHECK(config_hash(back) == config_hash(c));
    CHECK(back.train.seed == 9);
    CHECK(back.eval.rule.kind == RuleKind::threshold);
    CHECK(back.eval.rule.gamma == 0.3);
    CHECK(config_hash(parse_run_config("")) != config_hash(c));
    CHECK(config_hash(c).size() == 16);
}

TEST_CASE("command names and exit codes") {
    CHECK(parse_command("ablate") == Command::ablate);
    CHECK_THROWS_AS(parse_command("serve"), ConfigError);
    CHECK(exit_code_for(ConfigError("x")) == exit_config);
    CHECK(exit_code_for(FormatError("x")) == exit_data);
    CHECK(exit_code_for(DataError("x")) == exit_data);
    CHECK(exit_code_for(DivergenceError("x")) == exit_divergence);
    CHECK(exit_code_for(DegenerateEmbeddingError("x")) == exit_divergence);
    CHECK(exit_code_for(IoError("x")) == exit_io);
    CHECK(exit_code_for(ContractError("x")) == exit_other);
}

TEST_CASE("output root precedence") {
    RunOptions o;
    o.overrides = {"output.root=from_config"};
    CHECK(resolve_config(o).output_root == "from_config");
    ::setenv("GCL_OUTPUT_ROOT", "from_env", 1);
    CHECK(resolve_config(o).output_root == "from_env");
    o.out = "from_flag";
    CHECK(resolve_config(o).output_root == "from_flag");
    ::unsetenv("GCL_OUTPUT_ROOT");
    o.deterministic = true;
    o.overrides.push_back("deterministic=false");
    CHECK(resolve_config(o).deterministic);
}

TEST_CASE("train writes the artifact set, then eval, fidelity and explain reuse it") {
    const auto out = test::temp_dir("cli");
    std::ostringstream log;
    const auto t = run(tiny(Command::train, out), log);
    REQUIRE_MESSAGE(t.exit_code == exit_ok, t.error);
    const auto dir = *t.run_dir;
    for (const char* f : {"config.yaml", "metrics.jsonl", "best_model.ckpt", "codebook.bin", "state.ckpt", "summary.json"})
        CHECK_MESSAGE(fs::exists(dir / f), f);

    const auto snapshot = load_run_config(dir / "config.yaml");
    CHECK(snapshot.train.max_steps == 20);
    CHECK(snapshot.model.conv_width == 2);
    const auto summary = read_json(dir / "summary.json");
    CHECK(summary.at("config_hash") == config_hash(snapshot));
    CHECK(summary.at("steps_run") == 20);

    std::ifstream metrics(dir / "metrics.jsonl");
    std::size_t steps = 0, evals = 0;
    for (std::string line; std::getline(metrics, line);) {
        const auto j = nlohmann::json::parse(line);
        steps += j.at("event") == "step";
        evals += j.at("event") == "eval";
    }
    CHECK(steps == 20);
    CHECK(evals == 2);

    const auto ckpt = (dir / "best_model.ckpt").string();
    const auto e = run(tiny(Command::eval, out, {"eval.checkpoint=" + ckpt, "eval.codebook=" + (dir / "codebook.bin").string()}), log);
    REQUIRE_MESSAGE(e.exit_code == exit_ok, e.error);
    const auto results = read_json(*e.run_dir / "results.json");
    CHECK(results.contains("target_test_accuracy"));

    const auto f = run(tiny(Command::fidelity, out, {"eval.checkpoint=" + ckpt}), log);
    REQUIRE_MESSAGE(f.exit_code == exit_ok, f.error);
    CHECK(fs::exists(*f.run_dir / "fidelity.json"));

    const auto x = run(tiny(Command::explain, out, {"eval.checkpoint=" + ckpt, "eval.explain_queries=2"}), log);
    REQUIRE_MESSAGE(x.exit_code == exit_ok, x.error);
    CHECK(read_json(*x.run_dir / "explanations.json").size() == 2);
    CHECK(fs::exists(*x.run_dir / "query000.png"));
    fs::remove_all(out);
}

TEST_CASE("a mismatched checkpoint is a config error before any work") {
    const auto out = test::temp_dir("cli");
    auto spec = test::stub_spec();
    spec.input_shape = {1, 16, 16};
    spec.num_classes = spec.num_concepts = 4;
    spec.conv_width = 3;
    save_model(out + "/other.ckpt", ConceptModel(spec));
    const auto root = out + "/runs";
    std::ostringstream log;
    const auto e = run(tiny(Command::eval, root, {"eval.checkpoint=" + out + "/other.ckpt"}), log);
    CHECK(e.exit_code == exit_config);
    CHECK_FALSE(e.run_dir.has_value());
    CHECK(entries(root) == 0);

    const auto bad = run(tiny(Command::train, root, {"train.bogus=1"}), log);
    CHECK(bad.exit_code == exit_config);
    CHECK(entries(root) == 0);

    const auto missing = run(tiny(Command::eval, root, {"eval.checkpoint=" + out + "/nothing.ckpt"}), log);
    CHECK(missing.exit_code == exit_io);
    fs::remove_all(out);
}

TEST_CASE("ablate covers the three settings") {
    const auto out = test::temp_dir("cli");
    std::ostringstream log;
    const auto a = run(tiny(Command::ablate, out), log);
    REQUIRE_MESSAGE(a.exit_code == exit_ok, a.error);
    const auto table = read_json(*a.run_dir / "ablation.json");
    std::vector<std::string> names;
    for (const auto& row : table.at("rows")) names.push_back(row.at("ablation"));
    CHECK(names == std::vector<std::string>{"rce", "rce_pcg", "rce_pcg_ccl"});
    CHECK(fs::exists(*a.run_dir / "ablation.txt"));
    fs::remove_all(out);
}
