#pragma once

// Shared fixtures and independent reference computations for the test
// binaries. Nothing here calls into the library's loss, bank or metric code;
// the oracles are written from the definitions directly.

#include <cstdint>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "gcl/concept_model.hpp"
#include "gcl/trainer.hpp"

namespace gcl::test {

// ---- fixtures -------------------------------------------------------------

// small_conv, 1x8x8 input, N = K = 2, width 2, hidden 4 (909 parameters).
ModelSpec stub_spec(std::uint64_t seed = 7);

// Uniform random pixels; `per_class` samples of each class.
DomainDataset random_dataset(std::size_t num_classes, std::size_t per_class, const ImageShape& shape,
                             std::uint64_t seed);

// Source 6/class, few-shot target 2/class, val 2/class, all random.
TrainData random_train_data(const ModelSpec& spec, std::uint64_t seed);

// First `n` samples of `data` (source first, then target) as a batch.
Batch leading_batch(const TrainData& data, std::size_t n);

std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0);

// ---- gradient checking ----------------------------------------------------

using LossBuilder = std::function<Var(const ConceptModel&, std::span<const Var>)>;

struct GradReport {
    double max_rel_error = 0.0;
    std::string worst; // parameter[index]
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;
    std::size_t kinks = 0; // entries whose +-h probes switch a ReLU; not compared
};

// Central differences with step h on every parameter entry. Relative error
// is |a - n| / max(|a|, |n|, floor); the floor sits well above the
// difference quotient's rounding noise (~1e-11 here). Entries whose two
// probes see different activation patterns straddle a kink, where the
// central difference does not estimate the derivative; they are counted in
// `kinks` instead.
GradReport check_gradients(const ConceptModel& model, const LossBuilder& loss, double h = 1e-5,
                           double floor = 1e-7);

struct TermCheck {
    std::string term;
    GradReport report;
};

// Every objective term of a training step on the stub model: reconstruction
// with sparsity, prediction, contrastive, grounding (constant and
// differentiable prototypes), fidelity, codebook, and the two composites.
std::vector<TermCheck> gradient_suite(double h = 1e-5);

// ---- oracles --------------------------------------------------------------

namespace oracle {

double mse(std::span<const double> a, std::span<const double> b);
double l1(std::span<const double> a);
double cosine(std::span<const double> a, std::span<const double> b);
// -log(exp(sp/t) / (exp(sp/t) + sum exp(sn/t))), evaluated literally.
double info_nce(double s_pos, std::span<const double> s_neg, double tau);

// mu * mean(source) + (1 - mu) * mean(target), summed in index order.
std::vector<double> weighted_mean(const std::vector<std::vector<double>>& source,
                                  const std::vector<std::vector<double>>& target, double mu);

double iou(const std::set<std::size_t>& a, const std::set<std::size_t>& b);
// Mean IoU over all unordered pairs.
double mean_pair_iou(const std::vector<std::set<std::size_t>>& sets);

// Big-endian IDX writer.
std::vector<unsigned char> idx_images(const std::vector<std::vector<unsigned char>>& images, std::size_t rows,
                                      std::size_t cols);
std::vector<unsigned char> idx_labels(const std::vector<unsigned char>& labels);

} // namespace oracle

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes);
std::vector<unsigned char> read_bytes(const std::string& path);

// Fresh empty directory under the system temp dir.
std::string temp_dir(const std::string& tag);

} // namespace gcl::test
