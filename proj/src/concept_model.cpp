#include "gcl/concept_model.hpp"

#include <cmath>

#include "gcl/errors.hpp"
#include "gcl/rng.hpp"

namespace gcl {

namespace {

constexpr std::size_t kKernel = 3;

std::size_t conv_out(std::size_t in, std::size_t stride) { return (in + 2 - kKernel) / stride + 1; }

} // namespace

std::string_view to_string(Backbone b) noexcept {
    return b == Backbone::small_conv ? "small_conv" : "mlp";
}

Backbone parse_backbone(std::string_view name) {
    if (name == "small_conv") return Backbone::small_conv;
    if (name == "mlp") return Backbone::mlp;
    throw ConfigError("unknown backbone '" + std::string(name) + "' (expected small_conv or mlp)");
}

ModelSpec ModelSpec::for_classes(std::size_t num_classes, std::array<std::size_t, 3> input_shape) {
    ModelSpec spec;
    spec.input_shape = input_shape;
    spec.num_classes = num_classes;
    spec.num_concepts = num_classes;
    spec.concept_dim = 1;
    return spec;
}

void ModelSpec::validate() const {
    for (auto s : input_shape)
        if (s == 0) throw ConfigError("model input shape must be positive in every dimension");
    if (num_classes == 0) throw ConfigError("num_classes must be >= 1");
    if (num_concepts == 0) throw ConfigError("num_concepts (K) must be >= 1");
    if (concept_dim == 0) throw ConfigError("concept_dim (d) must be >= 1");
    if (hidden == 0) throw ConfigError("hidden width must be >= 1");
    if (backbone == Backbone::small_conv && conv_width == 0) throw ConfigError("conv_width must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

ConceptModel::ConceptModel(ModelSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    const auto [c, h, w] = spec_.input_shape;
    heights_ = {h, conv_out(h, 2), conv_out(conv_out(h, 2), 2)};
    widths_ = {w, conv_out(w, 2), conv_out(conv_out(w, 2), 2)};

    concept_net_ = make_encoder("F", 1);
    relevance_net_ = make_encoder("H", 2);

    const std::size_t kd = spec_.concept_size();
    if (spec_.backbone == Backbone::small_conv) {
        const std::size_t w2 = 2 * spec_.conv_width;
        decoder_.fcs.push_back(add_linear("G.fc", kd, w2 * heights_[2] * widths_[2]));
        decoder_.deconvs.push_back(add_deconv("G.deconv3", w2, w2));
        decoder_.deconvs.push_back(add_deconv("G.deconv2", w2, spec_.conv_width));
        decoder_.deconvs.push_back(add_deconv("G.deconv1", spec_.conv_width, c));
    } else {
        decoder_.fcs.push_back(add_linear("G.fc1", kd, spec_.hidden));
        decoder_.fcs.push_back(add_linear("G.fc2", spec_.hidden, spec_.hidden));
        decoder_.fcs.push_back(add_linear("G.fc3", spec_.hidden, spec_.input_size()));
    }
    aggregator_.push_back(add_linear("A.fc1", kd, spec_.hidden));
    aggregator_.push_back(add_linear("A.fc2", spec_.hidden, spec_.num_classes));
    selector_.push_back(add_linear("T.fc1", kd, spec_.hidden));
    selector_.push_back(add_linear("T.fc2", spec_.hidden, spec_.hidden));
    selector_.push_back(add_linear("T.fc3", spec_.hidden, spec_.num_classes));
    initialize();
}

ConceptModel::Layer ConceptModel::add_linear(const std::string& prefix, std::size_t in, std::size_t out) {
    params_.push_back({prefix + ".weight", Tensor({out, in})});
    params_.push_back({prefix + ".bias", Tensor({out})});
    return {params_.size() - 2, params_.size() - 1};
}

ConceptModel::Layer ConceptModel::add_conv(const std::string& prefix, std::size_t in, std::size_t out) {
    params_.push_back({prefix + ".weight", Tensor({out, in, kKernel, kKernel})});
    params_.push_back({prefix + ".bias", Tensor({out})});
    return {params_.size() - 2, params_.size() - 1};
}

ConceptModel::Layer ConceptModel::add_deconv(const std::string& prefix, std::size_t in, std::size_t out) {
    params_.push_back({prefix + ".weight", Tensor({in, out, kKernel, kKernel})});
    params_.push_back({prefix + ".bias", Tensor({out})});
    return {params_.size() - 2, params_.size() - 1};
}

ConceptModel::Encoder ConceptModel::make_encoder(const std::string& prefix, std::uint64_t tag) {
    Encoder enc;
    enc.dropout_tag = tag;
    const std::size_t kd = spec_.concept_size();
    if (spec_.backbone == Backbone::small_conv) {
        const std::size_t w = spec_.conv_width;
        enc.convs.push_back(add_conv(prefix + ".conv1", spec_.input_shape[0], w));
        enc.convs.push_back(add_conv(prefix + ".conv2", w, 2 * w));
        enc.convs.push_back(add_conv(prefix + ".conv3", 2 * w, 2 * w));
        enc.fcs.push_back(add_linear(prefix + ".fc", 2 * w * heights_[2] * widths_[2], kd));
    } else {
        enc.fcs.push_back(add_linear(prefix + ".fc1", spec_.input_size(), spec_.hidden));
        enc.fcs.push_back(add_linear(prefix + ".fc2", spec_.hidden, spec_.hidden));
        enc.fcs.push_back(add_linear(prefix + ".fc3", spec_.hidden, kd));
    }
    return enc;
}

// He-uniform weights, U(+-1/sqrt(fan_in)) biases.
void ConceptModel::initialize() {
    for (std::size_t i = 0; i < params_.size(); i += 2) {
        auto& weight = params_[i].value;
        auto& bias = params_[i + 1].value;
        // Linear [out,in]; conv [out,in,k,k]; deconv [in,out,k,k].
        std::size_t fan_in = weight.shape[1];
        if (weight.rank() == 4) {
            const bool deconv = params_[i].name.find("deconv") != std::string::npos;
            fan_in = (deconv ? weight.shape[0] : weight.shape[1]) * kKernel * kKernel;
        }
        const double w_bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        const double b_bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Rng rng(hash_seed({spec_.seed, i}));
        for (auto& v : weight.data) v = rng.uniform(-w_bound, w_bound);
        for (auto& v : bias.data) v = rng.uniform(-b_bound, b_bound);
    }
}

Tensor& ConceptModel::parameter(std::string_view name) {
    for (auto& p : params_)
        if (p.name == name) return p.value;
    throw ContractError("unknown parameter '" + std::string(name) + "'");
}

const Tensor& ConceptModel::parameter(std::string_view name) const {
    return const_cast<ConceptModel*>(this)->parameter(name);
}

std::size_t ConceptModel::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

void ConceptModel::check_finite() const {
    for (const auto& p : params_)
        if (!all_finite(p.value.values())) throw DivergenceError("non-finite values in parameter " + p.name);
}

std::vector<Var> ConceptModel::bind(Tape& tape, bool requires_grad) const {
    std::vector<Var> vars;
    vars.reserve(params_.size());
    for (const auto& p : params_) vars.push_back(requires_grad ? tape.variable(p.value) : tape.constant(p.value));
    return vars;
}

Var ConceptModel::run_mlp(std::span<const Layer> layers, std::span<const Var> bound, Var x) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        x = ops::linear(x, bound[layers[i].weight], bound[layers[i].bias]);
        if (i + 1 < layers.size()) x = ops::relu(x);
    }
    return x;
}

Var ConceptModel::run_encoder(const Encoder& enc, std::span<const Var> bound, Var x,
                              const DropoutContext& dropout) const {
    const std::size_t batch = x.shape()[0];
    const std::uint64_t mask_seed = hash_seed({dropout.seed, enc.dropout_tag});
    if (spec_.backbone == Backbone::small_conv) {
        const std::array<std::size_t, 3> strides{1, 2, 2};
        for (std::size_t i = 0; i < enc.convs.size(); ++i)
            x = ops::relu(ops::conv2d(x, bound[enc.convs[i].weight], bound[enc.convs[i].bias], strides[i], 1));
        x = ops::dropout(x, spec_.dropout, mask_seed, dropout.training);
        x = ops::reshape(x, {batch, x.value().size() / batch});
        return ops::linear(x, bound[enc.fcs[0].weight], bound[enc.fcs[0].bias]);
    }
    x = ops::reshape(x, {batch, spec_.input_size()});
    for (std::size_t i = 0; i + 1 < enc.fcs.size(); ++i)
        x = ops::relu(ops::linear(x, bound[enc.fcs[i].weight], bound[enc.fcs[i].bias]));
    x = ops::dropout(x, spec_.dropout, mask_seed, dropout.training);
    return ops::linear(x, bound[enc.fcs.back().weight], bound[enc.fcs.back().bias]);
}

Var ConceptModel::run_decoder(std::span<const Var> bound, Var z) const {
    const std::size_t batch = z.shape()[0];
    const auto [c, h, w] = spec_.input_shape;
    if (spec_.backbone == Backbone::small_conv) {
        const std::size_t w2 = 2 * spec_.conv_width;
        Var x = ops::relu(ops::linear(z, bound[decoder_.fcs[0].weight], bound[decoder_.fcs[0].bias]));
        x = ops::reshape(x, {batch, w2, heights_[2], widths_[2]});
        const std::array<std::size_t, 3> strides{2, 2, 1};
        const std::array<std::size_t, 3> out_h{heights_[1], heights_[0], heights_[0]};
        const std::array<std::size_t, 3> out_w{widths_[1], widths_[0], widths_[0]};
        for (std::size_t i = 0; i < decoder_.deconvs.size(); ++i) {
            x = ops::conv_transpose2d(x, bound[decoder_.deconvs[i].weight], bound[decoder_.deconvs[i].bias],
                                      strides[i], 1, out_h[i], out_w[i]);
            if (i + 1 < decoder_.deconvs.size()) x = ops::relu(x);
        }
        return ops::sigmoid(x);
    }
    Var x = run_mlp(decoder_.fcs, bound, z);
    return ops::reshape(ops::sigmoid(x), {batch, c, h, w});
}

Var ConceptModel::encode(std::span<const Var> bound, Var x, const DropoutContext& dropout) const {
    const auto& s = x.shape();
    if (s.size() != 4 || s[1] != spec_.input_shape[0] || s[2] != spec_.input_shape[1] ||
        s[3] != spec_.input_shape[2])
        throw ContractError("input of shape " + to_string(s) + " does not match model input [B," +
                            std::to_string(spec_.input_shape[0]) + "," + std::to_string(spec_.input_shape[1]) +
                            "," + std::to_string(spec_.input_shape[2]) + "]");
    if (bound.size() != params_.size()) throw ContractError("bound parameter list does not match model");
    return run_encoder(concept_net_, bound, x, dropout);
}

ConceptModel::Heads ConceptModel::forward(std::span<const Var> bound, Var x, const DropoutContext& dropout) const {
    Heads heads;
    heads.concepts = encode(bound, x, dropout);
    heads.relevances = run_encoder(relevance_net_, bound, x, dropout);
    heads.reconstruction = run_decoder(bound, heads.concepts);
    heads.aggregator_logits = run_mlp(aggregator_, bound, ops::mul(heads.concepts, heads.relevances));
    heads.selector_logits = run_mlp(selector_, bound, heads.concepts);
    return heads;
}

Var ConceptModel::scores(const Heads& heads, double w1, double w2) {
    if (w1 < 0.0 || w2 < 0.0) throw ConfigError("prediction weights must be >= 0");
    return ops::add(ops::scale(heads.aggregator_logits, w1), ops::scale(heads.selector_logits, w2));
}

Var ConceptModel::input_var(Tape& tape, std::span<const double> images, std::size_t count) const {
    if (images.size() != count * spec_.input_size())
        throw ContractError("expected " + std::to_string(count * spec_.input_size()) + " input values, got " +
                            std::to_string(images.size()));
    const auto [c, h, w] = spec_.input_shape;
    return tape.constant(Tensor({count, c, h, w}, std::vector<double>(images.begin(), images.end())));
}

ForwardOutput ConceptModel::forward(std::span<const double> x) const {
    check_finite();
    Tape tape;
    const auto bound = bind(tape, false);
    const auto heads = forward(bound, input_var(tape, x, 1), {});
    const Shape km{spec_.num_concepts, spec_.concept_dim};
    const auto [c, h, w] = spec_.input_shape;
    return ForwardOutput{Tensor(km, heads.concepts.value().data), Tensor(km, heads.relevances.value().data),
                         Tensor({c, h, w}, heads.reconstruction.value().data),
                         Tensor({spec_.num_classes}, heads.aggregator_logits.value().data),
                         Tensor({spec_.num_classes}, heads.selector_logits.value().data)};
}

std::vector<double> ConceptModel::predict(std::span<const double> x, double w1, double w2) const {
    const auto out = forward(x);
    return weighted_prediction(out.aggregator_logits.values(), out.selector_logits.values(), w1, w2);
}

Tensor ConceptModel::encode_batch(std::span<const double> images, std::size_t count) const {
    Tape tape;
    const auto bound = bind(tape, false);
    return encode(bound, input_var(tape, images, count), {}).value();
}

Tensor ConceptModel::relevance_batch(std::span<const double> images, std::size_t count) const {
    Tape tape;
    const auto bound = bind(tape, false);
    Var x = input_var(tape, images, count);
    encode(bound, x, {}); // shape validation
    return run_encoder(relevance_net_, bound, x, {}).value();
}

Tensor ConceptModel::scores_batch(std::span<const double> images, std::size_t count, double w1, double w2) const {
    Tape tape;
    const auto bound = bind(tape, false);
    return scores(forward(bound, input_var(tape, images, count), {}), w1, w2).value();
}

std::vector<double> weighted_prediction(std::span<const double> aggregator_logits,
                                        std::span<const double> selector_logits, double w1, double w2) {
    if (w1 < 0.0 || w2 < 0.0) throw ConfigError("prediction weights must be >= 0");
    if (aggregator_logits.size() != selector_logits.size())
        throw ContractError("aggregator and selector logits differ in length");
    std::vector<double> out(aggregator_logits.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = w1 * aggregator_logits[i] + w2 * selector_logits[i];
    return out;
}

} // namespace gcl
