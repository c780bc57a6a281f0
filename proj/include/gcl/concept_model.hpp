#pragma once

// Representative concept extraction model: concept encoder F, decoder G,
// relevance encoder H, aggregator A and salient-concept selector T.
//
//   scores(x) = w1 * A(F(x) * H(x)) + w2 * T(F(x))
//
// F and H share a topology but not parameters. Concept matrices are K x d and
// are flattened to length K*d wherever a vector is needed.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gcl/autodiff.hpp"
#include "gcl/tensor.hpp"

namespace gcl {

enum class Backbone { small_conv, mlp };

std::string_view to_string(Backbone b) noexcept;
Backbone parse_backbone(std::string_view name);

struct ModelSpec {
    std::array<std::size_t, 3> input_shape{1, 16, 16}; // channels, height, width
    std::size_t num_classes = 10;
    std::size_t num_concepts = 10;
    std::size_t concept_dim = 1;
    Backbone backbone = Backbone::small_conv;
    std::uint64_t seed = 0;
    // Base channel count of the convolutional encoder (w, 2w, 2w).
    std::size_t conv_width = 8;
    // Hidden width of the fully connected maps (A, T and the mlp backbone).
    std::size_t hidden = 32;
    double dropout = 0.1;

    // K = N, d = 1.
    static ModelSpec for_classes(std::size_t num_classes, std::array<std::size_t, 3> input_shape);

    std::size_t input_size() const noexcept { return input_shape[0] * input_shape[1] * input_shape[2]; }
    std::size_t concept_size() const noexcept { return num_concepts * concept_dim; }
    void validate() const;

    bool operator==(const ModelSpec&) const = default;
};

struct NamedTensor {
    std::string name;
    Tensor value;
};

// Output of one forward pass for a single input.
struct ForwardOutput {
    Tensor concepts;          // [K, d]
    Tensor relevances;        // [K, d]
    Tensor reconstruction;    // [C, H, W]
    Tensor aggregator_logits; // [N]
    Tensor selector_logits;   // [N]
};

// Dropout is active only when training; masks derive from `seed`.
struct DropoutContext {
    bool training = false;
    std::uint64_t seed = 0;
};

class ConceptModel {
public:
    explicit ConceptModel(ModelSpec spec);

    const ModelSpec& spec() const noexcept { return spec_; }
    std::span<const NamedTensor> parameters() const noexcept { return params_; }
    std::span<NamedTensor> parameters() noexcept { return params_; }
    Tensor& parameter(std::string_view name);
    const Tensor& parameter(std::string_view name) const;
    std::size_t parameter_count() const noexcept;

    // Throws DivergenceError naming the first non-finite parameter.
    void check_finite() const;

    // Tape-level interface used by the trainer and gradient checks. `bind`
    // puts every parameter on the tape (as variables or constants); the
    // returned vector is aligned with parameters().
    std::vector<Var> bind(Tape& tape, bool requires_grad) const;

    struct Heads {
        Var concepts;          // [B, K*d]
        Var relevances;        // [B, K*d]
        Var reconstruction;    // [B, C, H, W]
        Var aggregator_logits; // [B, N]
        Var selector_logits;   // [B, N]
    };

    // x: [B, C, H, W]
    Heads forward(std::span<const Var> bound, Var x, const DropoutContext& dropout) const;
    Var encode(std::span<const Var> bound, Var x, const DropoutContext& dropout) const;
    static Var scores(const Heads& heads, double w1, double w2);

    // Single-sample conveniences. x has input_size() values.
    ForwardOutput forward(std::span<const double> x) const;
    std::vector<double> predict(std::span<const double> x, double w1, double w2) const;

    // Batched inference over `count` consecutive samples; no dropout.
    Tensor encode_batch(std::span<const double> images, std::size_t count) const;
    Tensor relevance_batch(std::span<const double> images, std::size_t count) const;
    Tensor scores_batch(std::span<const double> images, std::size_t count, double w1, double w2) const;

private:
    struct Layer {
        std::size_t weight;
        std::size_t bias;
    };
    struct Encoder {
        std::vector<Layer> convs; // small_conv only
        std::vector<Layer> fcs;
        std::uint64_t dropout_tag;
    };
    struct Decoder {
        std::vector<Layer> fcs;
        std::vector<Layer> deconvs; // small_conv only
    };

    Layer add_linear(const std::string& prefix, std::size_t in, std::size_t out);
    Layer add_conv(const std::string& prefix, std::size_t in, std::size_t out);
    Layer add_deconv(const std::string& prefix, std::size_t in, std::size_t out);
    Encoder make_encoder(const std::string& prefix, std::uint64_t tag);
    void initialize();

    Var run_encoder(const Encoder& enc, std::span<const Var> bound, Var x, const DropoutContext& dropout) const;
    Var run_decoder(std::span<const Var> bound, Var z) const;
    static Var run_mlp(std::span<const Layer> layers, std::span<const Var> bound, Var x);
    Var input_var(Tape& tape, std::span<const double> images, std::size_t count) const;

    ModelSpec spec_;
    std::vector<NamedTensor> params_;
    Encoder concept_net_;
    Encoder relevance_net_;
    Decoder decoder_;
    std::vector<Layer> aggregator_;
    std::vector<Layer> selector_;
    // Spatial sizes after each encoder convolution: full, /2, /4.
    std::array<std::size_t, 3> heights_{};
    std::array<std::size_t, 3> widths_{};
};

// Class scores w1 * aggregator + w2 * selector; weights must be >= 0.
std::vector<double> weighted_prediction(std::span<const double> aggregator_logits,
                                        std::span<const double> selector_logits, double w1, double w2);

} // namespace gcl
