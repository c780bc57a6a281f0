#include "gcl/config.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include "gcl/errors.hpp"

namespace gcl {

namespace {

std::string similarity_name(Similarity s) { return s == Similarity::cosine ? "cosine" : "dot"; }

Similarity parse_similarity(const std::string& s) {
    if (s == "cosine") return Similarity::cosine;
    if (s == "dot") return Similarity::dot;
    throw ConfigError("unknown similarity '" + s + "' (expected cosine or dot)");
}

std::string data_kind_name(DataKind k) {
    switch (k) {
    case DataKind::synthetic: return "synthetic";
    case DataKind::idx: return "idx";
    case DataKind::folder: return "folder";
    }
    return "synthetic";
}

DataKind parse_data_kind(const std::string& s) {
    if (s == "synthetic") return DataKind::synthetic;
    if (s == "idx") return DataKind::idx;
    if (s == "folder") return DataKind::folder;
    throw ConfigError("unknown data kind '" + s + "' (expected synthetic, idx or folder)");
}

YAML::Node domain_node(const DomainSource& d) {
    YAML::Node n;
    n["images"] = d.images;
    n["labels"] = d.labels;
    n["root"] = d.root;
    return n;
}

YAML::Node to_node(const RunConfig& c) {
    YAML::Node root;
    YAML::Node m;
    m["backbone"] = std::string(to_string(c.model.backbone));
    m["num_concepts"] = c.model.num_concepts;
    m["concept_dim"] = c.model.concept_dim;
    m["conv_width"] = c.model.conv_width;
    m["hidden"] = c.model.hidden;
    m["dropout"] = c.model.dropout;
    root["model"] = m;

    const auto& t = c.train;
    const auto& w = t.weights;
    YAML::Node tr;
    tr["ablation"] = std::string(to_string(t.ablation));
    tr["seed"] = t.seed;
    tr["omega1"] = w.omega1;
    tr["omega2"] = w.omega2;
    tr["lambda"] = w.lambda;
    tr["tau"] = w.tau;
    tr["similarity"] = similarity_name(w.similarity);
    tr["lambda1"] = w.lambda1;
    tr["lambda2"] = w.lambda2;
    tr["beta"] = w.beta;
    tr["epsilon"] = w.epsilon;
    tr["alpha"] = w.alpha;
    tr["xi"] = w.xi;
    tr["mu"] = t.mu;
    tr["lr0"] = t.lr0;
    tr["momentum"] = t.momentum;
    tr["max_steps"] = t.max_steps;
    tr["batch_size"] = t.batch_size;
    tr["target_fraction"] = t.target_fraction;
    tr["eval_interval"] = t.eval_interval;
    tr["early_stop_patience"] = t.early_stop_patience;
    tr["prototypes_source"] = t.prototypes_source;
    tr["prototypes_target"] = t.prototypes_target;
    tr["prototype_gradients"] = t.prototype_gradients;
    tr["init_checkpoint"] = c.init_checkpoint;
    tr["resume_from"] = c.resume_from;
    root["train"] = tr;

    const auto& p = t.augmentation;
    YAML::Node a;
    a["kind"] = std::string(to_string(p.kind));
    a["views_per_set"] = p.views_per_set;
    a["crop_scale_min"] = p.crop_scale_min;
    a["crop_scale_max"] = p.crop_scale_max;
    a["crop_ratio_min"] = p.crop_ratio_min;
    a["crop_ratio_max"] = p.crop_ratio_max;
    a["rotation_degrees"] = p.rotation_degrees;
    a["flip_prob"] = p.flip_prob;
    a["jitter_prob"] = p.jitter_prob;
    a["brightness"] = p.brightness;
    a["contrast"] = p.contrast;
    a["saturation"] = p.saturation;
    a["hue"] = p.hue;
    a["grayscale_prob"] = p.grayscale_prob;
    a["blur_prob"] = p.blur_prob;
    a["blur_sigma_min"] = p.blur_sigma_min;
    a["blur_sigma_max"] = p.blur_sigma_max;
    root["augmentation"] = a;

    const auto& d = c.data;
    YAML::Node dn;
    dn["kind"] = data_kind_name(d.kind);
    YAML::Node shape(YAML::NodeType::Sequence);
    for (auto s : d.image_shape) shape.push_back(s);
    shape.SetStyle(YAML::EmitterStyle::Flow);
    dn["image_shape"] = shape;
    dn["shots"] = d.shots;
    dn["val_fraction"] = d.val_fraction;
    dn["split_seed"] = d.split_seed;
    YAML::Node syn;
    syn["n_classes"] = d.synthetic.n_classes;
    syn["samples_per_class"] = d.synthetic.samples_per_class;
    syn["shift"] = std::string(to_string(d.synthetic.shift));
    syn["sigma"] = d.synthetic.sigma;
    syn["seed"] = d.synthetic.seed;
    dn["synthetic"] = syn;
    dn["source"] = domain_node(d.source);
    dn["target"] = domain_node(d.target);
    root["data"] = dn;

    YAML::Node ev;
    ev["rule"] = c.eval.rule.kind == RuleKind::top_k ? "top_k" : "threshold";
    ev["k"] = c.eval.rule.k;
    ev["gamma"] = c.eval.rule.gamma;
    ev["checkpoint"] = c.eval.checkpoint;
    ev["codebook"] = c.eval.codebook;
    ev["explain_queries"] = c.eval.explain_queries;
    ev["explain_top_k"] = c.eval.explain_top_k;
    root["eval"] = ev;

    YAML::Node ab(YAML::NodeType::Sequence);
    for (auto x : c.ablate) ab.push_back(std::string(to_string(x)));
    ab.SetStyle(YAML::EmitterStyle::Flow);
    root["ablate"] = ab;

    YAML::Node out;
    out["root"] = c.output_root;
    root["output"] = out;
    root["deterministic"] = c.deterministic;
    return root;
}

template <typename T>
T get(const YAML::Node& n, const std::string& path) {
    try {
        return n.as<T>();
    } catch (const YAML::Exception&) {
        throw ConfigError("config key '" + path + "' has an invalid value '" + YAML::Dump(n) + "'");
    }
}

DomainSource domain_from(const YAML::Node& n, const std::string& path) {
    return {get<std::string>(n["images"], path + ".images"), get<std::string>(n["labels"], path + ".labels"),
            get<std::string>(n["root"], path + ".root")};
}

RunConfig from_node(const YAML::Node& root) {
    RunConfig c;
    const auto m = root["model"];
    c.model.backbone = parse_backbone(get<std::string>(m["backbone"], "model.backbone"));
    c.model.num_concepts = get<std::size_t>(m["num_concepts"], "model.num_concepts");
    c.model.concept_dim = get<std::size_t>(m["concept_dim"], "model.concept_dim");
    c.model.conv_width = get<std::size_t>(m["conv_width"], "model.conv_width");
    c.model.hidden = get<std::size_t>(m["hidden"], "model.hidden");
    c.model.dropout = get<double>(m["dropout"], "model.dropout");

    const auto tr = root["train"];
    auto& t = c.train;
    auto& w = t.weights;
    auto num = [&](const char* key) { return get<double>(tr[key], std::string("train.") + key); };
    auto count = [&](const char* key) { return get<std::size_t>(tr[key], std::string("train.") + key); };
    t.ablation = parse_ablation(get<std::string>(tr["ablation"], "train.ablation"));
    t.seed = get<std::uint64_t>(tr["seed"], "train.seed");
    w.omega1 = num("omega1");
    w.omega2 = num("omega2");
    w.lambda = num("lambda");
    w.tau = num("tau");
    w.similarity = parse_similarity(get<std::string>(tr["similarity"], "train.similarity"));
    w.lambda1 = num("lambda1");
    w.lambda2 = num("lambda2");
    w.beta = num("beta");
    w.epsilon = num("epsilon");
    w.alpha = num("alpha");
    w.xi = num("xi");
    t.mu = num("mu");
    t.lr0 = num("lr0");
    t.momentum = num("momentum");
    t.max_steps = count("max_steps");
    t.batch_size = count("batch_size");
    t.target_fraction = num("target_fraction");
    t.eval_interval = count("eval_interval");
    t.early_stop_patience = count("early_stop_patience");
    t.prototypes_source = count("prototypes_source");
    t.prototypes_target = count("prototypes_target");
    t.prototype_gradients = get<bool>(tr["prototype_gradients"], "train.prototype_gradients");
    c.init_checkpoint = get<std::string>(tr["init_checkpoint"], "train.init_checkpoint");
    c.resume_from = get<std::string>(tr["resume_from"], "train.resume_from");

    const auto a = root["augmentation"];
    auto anum = [&](const char* key) { return get<double>(a[key], std::string("augmentation.") + key); };
    auto& p = t.augmentation;
    p.kind = parse_policy_kind(get<std::string>(a["kind"], "augmentation.kind"));
    p.views_per_set = get<std::size_t>(a["views_per_set"], "augmentation.views_per_set");
    p.crop_scale_min = anum("crop_scale_min");
    p.crop_scale_max = anum("crop_scale_max");
    p.crop_ratio_min = anum("crop_ratio_min");
    p.crop_ratio_max = anum("crop_ratio_max");
    p.rotation_degrees = anum("rotation_degrees");
    p.flip_prob = anum("flip_prob");
    p.jitter_prob = anum("jitter_prob");
    p.brightness = anum("brightness");
    p.contrast = anum("contrast");
    p.saturation = anum("saturation");
    p.hue = anum("hue");
    p.grayscale_prob = anum("grayscale_prob");
    p.blur_prob = anum("blur_prob");
    p.blur_sigma_min = anum("blur_sigma_min");
    p.blur_sigma_max = anum("blur_sigma_max");

    const auto d = root["data"];
    c.data.kind = parse_data_kind(get<std::string>(d["kind"], "data.kind"));
    const auto shape = get<std::vector<std::size_t>>(d["image_shape"], "data.image_shape");
    if (shape.size() != 3) throw ConfigError("data.image_shape needs three entries [channels, height, width]");
    c.data.image_shape = {shape[0], shape[1], shape[2]};
    c.data.shots = get<std::size_t>(d["shots"], "data.shots");
    c.data.val_fraction = get<double>(d["val_fraction"], "data.val_fraction");
    c.data.split_seed = get<std::uint64_t>(d["split_seed"], "data.split_seed");
    const auto syn = d["synthetic"];
    c.data.synthetic.n_classes = get<std::size_t>(syn["n_classes"], "data.synthetic.n_classes");
    c.data.synthetic.samples_per_class = get<std::size_t>(syn["samples_per_class"], "data.synthetic.samples_per_class");
    c.data.synthetic.shift = parse_domain_shift(get<std::string>(syn["shift"], "data.synthetic.shift"));
    c.data.synthetic.sigma = get<double>(syn["sigma"], "data.synthetic.sigma");
    c.data.synthetic.seed = get<std::uint64_t>(syn["seed"], "data.synthetic.seed");
    c.data.source = domain_from(d["source"], "data.source");
    c.data.target = domain_from(d["target"], "data.target");

    const auto ev = root["eval"];
    const auto rule = get<std::string>(ev["rule"], "eval.rule");
    if (rule == "top_k") c.eval.rule = ConceptRule::top_k(get<std::size_t>(ev["k"], "eval.k"));
    else if (rule == "threshold") c.eval.rule = ConceptRule::threshold(get<double>(ev["gamma"], "eval.gamma"));
    else throw ConfigError("eval.rule must be top_k or threshold, got '" + rule + "'");
    c.eval.rule.k = get<std::size_t>(ev["k"], "eval.k");
    c.eval.rule.gamma = get<double>(ev["gamma"], "eval.gamma");
    c.eval.checkpoint = get<std::string>(ev["checkpoint"], "eval.checkpoint");
    c.eval.codebook = get<std::string>(ev["codebook"], "eval.codebook");
    c.eval.explain_queries = get<std::size_t>(ev["explain_queries"], "eval.explain_queries");
    c.eval.explain_top_k = get<std::size_t>(ev["explain_top_k"], "eval.explain_top_k");

    c.ablate.clear();
    for (const auto& name : get<std::vector<std::string>>(root["ablate"], "ablate"))
        c.ablate.push_back(parse_ablation(name));
    c.output_root = get<std::string>(root["output"]["root"], "output.root");
    c.deterministic = get<bool>(root["deterministic"], "deterministic");
    c.train.deterministic = c.deterministic;
    return c;
}

void merge(YAML::Node schema, const YAML::Node& user, const std::string& path) {
    if (!user.IsMap()) throw ConfigError("config section '" + (path.empty() ? "<root>" : path) + "' must be a mapping");
    for (const auto& kv : user) {
        const auto key = kv.first.as<std::string>();
        const auto full = path.empty() ? key : path + "." + key;
        if (!schema[key]) throw ConfigError("unknown config key '" + full + "'");
        YAML::Node target = schema[key];
        if (target.IsMap()) {
            merge(target, kv.second, full);
        } else {
            if (kv.second.IsMap()) throw ConfigError("config key '" + full + "' expects a value, not a mapping");
            schema[key] = kv.second;
        }
    }
}

void apply_override(YAML::Node root, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override '" + assignment + "' must have the form key.path=value");
    const auto key_path = assignment.substr(0, eq);
    const auto value = assignment.substr(eq + 1);
    std::vector<std::string> keys;
    std::stringstream ss(key_path);
    for (std::string part; std::getline(ss, part, '.');) keys.push_back(part);
    YAML::Node node = root;
    for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
        if (!node.IsMap() || !node[keys[i]]) throw ConfigError("override references unknown key '" + key_path + "'");
        node.reset(node[keys[i]]);
    }
    if (!node.IsMap() || !node[keys.back()]) throw ConfigError("override references unknown key '" + key_path + "'");
    if (node[keys.back()].IsMap()) throw ConfigError("override '" + key_path + "' names a section, not a value");
    YAML::Node parsed;
    try {
        parsed = YAML::Load(value);
    } catch (const YAML::Exception&) {
        throw ConfigError("override '" + assignment + "' has an unparsable value");
    }
    node[keys.back()] = parsed.IsNull() ? YAML::Node(value) : parsed;
}

} // namespace

ModelSpec RunConfig::model_spec(std::size_t num_classes) const {
    ModelSpec spec;
    spec.input_shape = {data.image_shape[0], data.image_shape[1], data.image_shape[2]};
    spec.num_classes = num_classes;
    spec.num_concepts = model.num_concepts == 0 ? num_classes : model.num_concepts;
    spec.concept_dim = model.concept_dim;
    spec.backbone = model.backbone;
    spec.seed = train.seed;
    spec.conv_width = model.conv_width;
    spec.hidden = model.hidden;
    spec.dropout = model.dropout;
    return spec;
}

void RunConfig::validate() const {
    train.validate();
    if (data.kind == DataKind::synthetic) {
        data.synthetic.validate();
        if (data.image_shape != ImageShape{1, 16, 16})
            throw ConfigError("the synthetic task produces 1x16x16 images; set data.image_shape to [1, 16, 16]");
    } else {
        auto need = [&](const DomainSource& d, const char* role) {
            if (data.kind == DataKind::idx && (d.images.empty() || d.labels.empty()))
                throw ConfigError(std::string("data.") + role + " needs images and labels paths for idx data");
            if (data.kind == DataKind::folder && d.root.empty())
                throw ConfigError(std::string("data.") + role + ".root is required for folder data");
        };
        need(data.source, "source");
        need(data.target, "target");
    }
    for (auto s : data.image_shape)
        if (s == 0) throw ConfigError("data.image_shape entries must be positive");
    if (data.shots == 0) throw ConfigError("data.shots must be >= 1");
    if (!(data.val_fraction > 0.0 && data.val_fraction < 1.0))
        throw ConfigError("data.val_fraction must lie in (0, 1)");
    if (eval.rule.kind == RuleKind::top_k && eval.rule.k == 0) throw ConfigError("eval.k must be >= 1");
    if (eval.rule.kind == RuleKind::threshold && !(eval.rule.gamma > 0.0 && eval.rule.gamma <= 1.0))
        throw ConfigError("eval.gamma must lie in (0, 1]");
    if (eval.explain_top_k == 0) throw ConfigError("eval.explain_top_k must be >= 1");
    if (ablate.empty()) throw ConfigError("ablate needs at least one setting");
    if (output_root.empty()) throw ConfigError("output.root must not be empty");
    if (model.concept_dim == 0) throw ConfigError("model.concept_dim must be >= 1");
    if (train.ablation == Ablation::sca && init_checkpoint.empty())
        throw ConfigError("sca training initialises its encoder from train.init_checkpoint, which is empty");
}

RunConfig parse_run_config(const std::string& yaml_text, const std::vector<std::string>& overrides) {
    YAML::Node user;
    try {
        user = YAML::Load(yaml_text);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("config is not valid YAML: ") + e.what());
    }
    YAML::Node resolved = to_node(RunConfig{});
    if (!user.IsNull()) merge(resolved, user, "");
    for (const auto& o : overrides) apply_override(resolved, o);
    auto config = from_node(resolved);
    config.validate();
    return config;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), overrides);
}

std::string to_yaml(const RunConfig& config) {
    YAML::Emitter out;
    out << to_node(config);
    return std::string(out.c_str()) + "\n";
}

std::string config_hash(const RunConfig& config) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : to_yaml(config)) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return fmt::format("{:016x}", h);
}

} // namespace gcl
