#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include <unistd.h>

#include "gcl/rng.hpp"

namespace gcl::test {

ModelSpec stub_spec(std::uint64_t seed) {
    ModelSpec s;
    s.input_shape = {1, 8, 8};
    s.num_classes = 2;
    s.num_concepts = 2;
    s.concept_dim = 1;
    s.conv_width = 2;
    s.hidden = 4;
    s.seed = seed;
    return s;
}

DomainDataset random_dataset(std::size_t num_classes, std::size_t per_class, const ImageShape& shape,
                             std::uint64_t seed) {
    DomainDataset ds;
    ds.image_shape = shape;
    ds.num_classes = num_classes;
    Rng rng(seed);
    std::vector<double> img(shape[0] * shape[1] * shape[2]);
    for (std::size_t c = 0; c < num_classes; ++c)
        for (std::size_t i = 0; i < per_class; ++i) {
            for (auto& p : img) p = rng.uniform();
            ds.push_back(img, c);
        }
    return ds;
}

TrainData random_train_data(const ModelSpec& spec, std::uint64_t seed) {
    const ImageShape shape{spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]};
    TrainData d;
    d.source = random_dataset(spec.num_classes, 6, shape, seed);
    d.target = random_dataset(spec.num_classes, 2, shape, seed + 1);
    d.val = random_dataset(spec.num_classes, 2, shape, seed + 2);
    return d;
}

Batch leading_batch(const TrainData& data, std::size_t n) {
    Batch b;
    for (std::size_t i = 0; i < n; ++i) {
        const bool src = i < data.source.size();
        const auto& ds = src ? data.source : data.target;
        const std::size_t k = src ? i : i - data.source.size();
        const auto img = ds.image(k);
        b.images.insert(b.images.end(), img.begin(), img.end());
        b.labels.push_back(ds.labels[k]);
        b.ids.push_back(i);
    }
    return b;
}

std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double lo, double hi) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

GradReport check_gradients(const ConceptModel& model, const LossBuilder& loss, double h, double floor) {
    Tape tape;
    const auto bound = model.bind(tape, true);
    const Var root = loss(model, bound);
    tape.backward(root);

    // Loss value plus the exact-zero pattern of every recorded node; ReLU
    // switching shows up as a change in that pattern.
    struct Probe {
        double value;
        std::vector<bool> zeros;
    };
    auto evaluate = [&](const ConceptModel& m) {
        Tape t;
        const auto b = m.bind(t, false);
        Probe p{loss(m, b).item(), {}};
        for (std::size_t id = 0; id < t.size(); ++id)
            for (double v : t.value(id).data) p.zeros.push_back(v == 0.0);
        return p;
    };

    GradReport report;
    ConceptModel probe = model;
    const auto params = model.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
        const Tensor analytic = tape.grad(bound[p]);
        auto& values = probe.parameters()[p].value.data;
        for (std::size_t k = 0; k < values.size(); ++k) {
            const double saved = values[k];
            values[k] = saved + h;
            const auto up = evaluate(probe);
            values[k] = saved - h;
            const auto down = evaluate(probe);
            values[k] = saved;
            if (up.zeros != down.zeros) {
                ++report.kinks;
                continue;
            }
            const double numeric = (up.value - down.value) / (2.0 * h);
            const double a = analytic.data[k];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst = params[p].name + "[" + std::to_string(k) + "]";
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
            ++report.checked;
        }
    }
    return report;
}

std::vector<TermCheck> gradient_suite(double h) {
    const auto spec = stub_spec();
    const ConceptModel model(spec);
    const auto data = random_train_data(spec, 11);
    const auto batch = leading_batch(data, 16);

    TrainConfig cfg;
    cfg.ablation = Ablation::rce_pcg_ccl;
    cfg.weights.lambda = 0.1; // large enough for the L1 part to matter
    cfg.augmentation = TransformPolicy::crop_rotate();
    cfg.seed = 3;
    const std::uint64_t step = 1;
    auto sets = sample_prototype_sets(data.source, data.target, 5, 1, cfg.seed);
    const auto bank = update_bank(make_bank(spec, cfg.mu), model, data.source, data.target, sets, step);

    auto term = [&](TrainConfig c, auto pick) -> LossBuilder {
        return [=, &data, &batch, &sets, &bank](const ConceptModel& m, std::span<const Var> bound) {
            return pick(build_step_graph(m, bound, batch, data, sets, bank, c, step));
        };
    };
    auto sca = cfg;
    sca.ablation = Ablation::sca;
    auto sca_bank = update_bank(make_bank(spec, 1.0), model, data.source, data.target,
                                sample_prototype_sets(data.source, data.target, 5, 0, cfg.seed), step);
    auto diff = cfg;
    diff.prototype_gradients = true;

    std::vector<TermCheck> out;
    auto run = [&](const std::string& name, const LossBuilder& b) { out.push_back({name, check_gradients(model, b, h)}); };
    run("reconstruction_sparsity", term(cfg, [](const StepGraph& g) { return g.rec; }));
    run("prediction", term(cfg, [](const StepGraph& g) { return g.pred; }));
    run("contrastive", term(cfg, [](const StepGraph& g) { return *g.ssl; }));
    run("grounding", term(cfg, [](const StepGraph& g) { return *g.grnd; }));
    run("grounding_differentiable_prototypes", term(diff, [](const StepGraph& g) { return *g.grnd; }));
    run("fidelity", term(cfg, [](const StepGraph& g) { return *g.fid; }));
    run("composite", term(cfg, [](const StepGraph& g) { return g.total; }));
    run("codebook", [&, sca](const ConceptModel& m, std::span<const Var> bound) {
        return *build_step_graph(m, bound, batch, data, sets, sca_bank, sca, step).codebook;
    });
    run("composite_sca", [&, sca](const ConceptModel& m, std::span<const Var> bound) {
        return build_step_graph(m, bound, batch, data, sets, sca_bank, sca, step).total;
    });
    return out;
}

namespace oracle {

double mse(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

double l1(std::span<const double> a) {
    double s = 0.0;
    for (double v : a) s += std::abs(v);
    return s;
}

double cosine(std::span<const double> a, std::span<const double> b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

double info_nce(double s_pos, std::span<const double> s_neg, double tau) {
    const double num = std::exp(s_pos / tau);
    double den = num;
    for (double s : s_neg) den += std::exp(s / tau);
    return -std::log(num / den);
}

std::vector<double> weighted_mean(const std::vector<std::vector<double>>& source,
                                  const std::vector<std::vector<double>>& target, double mu) {
    const std::size_t n = source.front().size();
    std::vector<double> s(n, 0.0), t(n, 0.0), out(n);
    for (const auto& v : source)
        for (std::size_t i = 0; i < n; ++i) s[i] += v[i];
    for (const auto& v : target)
        for (std::size_t i = 0; i < n; ++i) t[i] += v[i];
    for (std::size_t i = 0; i < n; ++i) {
        const double sm = s[i] / static_cast<double>(source.size());
        const double tm = target.empty() ? 0.0 : t[i] / static_cast<double>(target.size());
        out[i] = mu * sm + (1.0 - mu) * tm;
    }
    return out;
}

double iou(const std::set<std::size_t>& a, const std::set<std::size_t>& b) {
    std::vector<std::size_t> inter, uni;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(uni));
    if (uni.empty()) return 1.0;
    return static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

double mean_pair_iou(const std::vector<std::set<std::size_t>>& sets) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < sets.size(); ++i)
        for (std::size_t j = i + 1; j < sets.size(); ++j) {
            s += iou(sets[i], sets[j]);
            ++n;
        }
    return s / static_cast<double>(n);
}

namespace {
void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<unsigned char>((v >> shift) & 0xff));
}
} // namespace

std::vector<unsigned char> idx_images(const std::vector<std::vector<unsigned char>>& images, std::size_t rows,
                                      std::size_t cols) {
    std::vector<unsigned char> out{0, 0, 0x08, 3};
    put_be32(out, static_cast<std::uint32_t>(images.size()));
    put_be32(out, static_cast<std::uint32_t>(rows));
    put_be32(out, static_cast<std::uint32_t>(cols));
    for (const auto& img : images) out.insert(out.end(), img.begin(), img.end());
    return out;
}

std::vector<unsigned char> idx_labels(const std::vector<unsigned char>& labels) {
    std::vector<unsigned char> out{0, 0, 0x08, 1};
    put_be32(out, static_cast<std::uint32_t>(labels.size()));
    out.insert(out.end(), labels.begin(), labels.end());
    return out;
}

} // namespace oracle

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string temp_dir(const std::string& tag) {
    static int counter = 0;
    const auto dir = std::filesystem::temp_directory_path() /
                     ("gcl_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

} // namespace gcl::test
