#include "gcl/losses.hpp"

#include "gcl/errors.hpp"

namespace gcl {

std::string_view to_string(Ablation a) noexcept {
    switch (a) {
    case Ablation::rce: return "rce";
    case Ablation::rce_pcg: return "rce_pcg";
    case Ablation::rce_pcg_ccl: return "rce_pcg_ccl";
    case Ablation::sca: return "sca";
    }
    return "rce";
}

Ablation parse_ablation(std::string_view name) {
    if (name == "rce") return Ablation::rce;
    if (name == "rce_pcg") return Ablation::rce_pcg;
    if (name == "rce_pcg_ccl") return Ablation::rce_pcg_ccl;
    if (name == "sca") return Ablation::sca;
    throw ConfigError("unknown ablation '" + std::string(name) + "' (expected rce, rce_pcg, rce_pcg_ccl or sca)");
}

bool uses_ccl(Ablation a) noexcept { return a == Ablation::rce_pcg_ccl || a == Ablation::sca; }
bool uses_pcg(Ablation a) noexcept { return a == Ablation::rce_pcg || a == Ablation::rce_pcg_ccl; }
bool uses_codebook(Ablation a) noexcept { return a == Ablation::sca; }

void ObjectiveWeights::validate() const {
    const std::pair<const char*, double> fields[] = {{"lambda", lambda}, {"lambda1", lambda1}, {"lambda2", lambda2},
                                                     {"beta", beta},     {"omega1", omega1},   {"omega2", omega2},
                                                     {"epsilon", epsilon}, {"alpha", alpha},   {"xi", xi}};
    for (const auto& [name, v] : fields)
        if (!(v >= 0.0)) throw ConfigError(std::string("weight ") + name + " must be >= 0");
    if (!(tau > 0.0)) throw ConfigError("temperature tau must be > 0");
}

nlohmann::json to_json(const ObjectiveWeights& w) {
    return {{"lambda", w.lambda},   {"tau", w.tau},         {"lambda1", w.lambda1}, {"lambda2", w.lambda2},
            {"beta", w.beta},       {"omega1", w.omega1},   {"omega2", w.omega2},   {"epsilon", w.epsilon},
            {"alpha", w.alpha},     {"xi", w.xi},
            {"similarity", w.similarity == Similarity::cosine ? "cosine" : "dot"}};
}

nlohmann::json to_json(const LossBreakdown& b) {
    return {{"rec", b.rec},   {"pred", b.pred},         {"ssl", b.ssl},     {"grnd", b.grnd},
            {"fid", b.fid},   {"codebook", b.codebook}, {"total", b.total}};
}

double assemble_total(const LossBreakdown& b, const ObjectiveWeights& w, Ablation ablation) {
    if (ablation == Ablation::sca) return b.pred + w.xi * b.rec + w.alpha * b.ssl + b.codebook;
    return b.pred + b.rec + w.beta * (b.ssl + w.lambda1 * b.grnd + w.lambda2 * b.fid);
}

LossBreakdown compose(LossBreakdown t, const ObjectiveWeights& w, Ablation ablation) {
    if (!uses_ccl(ablation)) t.ssl = 0.0;
    if (!uses_pcg(ablation)) t.grnd = t.fid = 0.0;
    if (!uses_codebook(ablation)) t.codebook = 0.0;
    t.total = assemble_total(t, w, ablation);
    t.weights_used = w;
    return t;
}

void ContrastiveBatch::validate() const {
    if (positives.empty() || negatives.empty())
        throw ContractError("contrastive batch needs at least one positive and one negative");
    if (anchor.empty()) throw ContractError("contrastive batch has an empty anchor");
    for (const auto* set : {&positives, &negatives})
        for (const auto& v : *set)
            if (v.size() != anchor.size()) throw ContractError("contrastive vectors differ in length");
}

namespace {

Var row_constant(Tape& tape, std::span<const double> v) {
    return tape.constant(Tensor({1, v.size()}, std::vector<double>(v.begin(), v.end())));
}

Var rows_constant(Tape& tape, const std::vector<std::vector<double>>& rows) {
    std::vector<double> flat;
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    return tape.constant(Tensor({rows.size(), rows.front().size()}, std::move(flat)));
}

void require_equal_length(std::size_t a, std::size_t b, const char* what) {
    if (a != b)
        throw ContractError(std::string(what) + ": length mismatch " + std::to_string(a) + " vs " + std::to_string(b));
}

} // namespace

double reconstruction_sparsity(std::span<const double> x, std::span<const double> reconstruction,
                               std::span<const double> concepts, double lambda) {
    require_equal_length(x.size(), reconstruction.size(), "reconstruction_sparsity");
    if (!(lambda >= 0.0)) throw ConfigError("sparsity weight lambda must be >= 0");
    Tape tape;
    return terms::reconstruction_sparsity(row_constant(tape, x), row_constant(tape, reconstruction),
                                          row_constant(tape, concepts), lambda)
        .item();
}

double contrastive_loss(const ContrastiveBatch& batch, double tau, Similarity similarity) {
    batch.validate();
    Tape tape;
    return terms::contrastive(row_constant(tape, batch.anchor), rows_constant(tape, batch.positives),
                              rows_constant(tape, batch.negatives), batch.positives.size(), batch.negatives.size(),
                              tau, similarity)
        .item();
}

double grounding_loss(std::span<const double> concepts, std::span<const double> prototype) {
    require_equal_length(concepts.size(), prototype.size(), "grounding_loss");
    Tape tape;
    return terms::grounding(row_constant(tape, concepts), row_constant(tape, prototype)).item();
}

double fidelity_loss(std::span<const double> concepts_i, std::span<const double> concepts_j, bool labels_equal) {
    require_equal_length(concepts_i.size(), concepts_j.size(), "fidelity_loss");
    Tape tape;
    std::vector<double> both(concepts_i.begin(), concepts_i.end());
    both.insert(both.end(), concepts_j.begin(), concepts_j.end());
    const std::size_t labels[2] = {0, labels_equal ? 0u : 1u};
    return terms::fidelity(tape.constant(Tensor({2, concepts_i.size()}, std::move(both))), labels).item();
}

double codebook_supervision_loss(std::span<const double> concepts, std::span<const double> code, double epsilon) {
    require_equal_length(concepts.size(), code.size(), "codebook_supervision_loss");
    if (!(epsilon >= 0.0)) throw ConfigError("codebook weight epsilon must be >= 0");
    Tape tape;
    return terms::codebook(row_constant(tape, concepts), row_constant(tape, code), epsilon).item();
}

double prediction_loss(std::span<const double> scores, std::size_t label) {
    if (label >= scores.size())
        throw ContractError("label " + std::to_string(label) + " outside 0.." + std::to_string(scores.size() - 1));
    Tape tape;
    const std::size_t labels[1] = {label};
    return terms::prediction(row_constant(tape, scores), labels).item();
}

LossBreakdown total_loss(const ForwardOutput& forward, const TotalLossInputs& in, const ObjectiveWeights& w,
                         Ablation ablation) {
    w.validate();
    const auto scores =
        weighted_prediction(forward.aggregator_logits.values(), forward.selector_logits.values(), w.omega1, w.omega2);
    const auto concepts = forward.concepts.values();
    LossBreakdown t;
    t.pred = prediction_loss(scores, in.label);
    t.rec = reconstruction_sparsity(in.x, forward.reconstruction.values(), concepts, w.lambda);
    if (uses_ccl(ablation) && in.contrastive) t.ssl = contrastive_loss(*in.contrastive, w.tau, w.similarity);
    if (in.prototype) {
        if (uses_pcg(ablation)) t.grnd = grounding_loss(concepts, *in.prototype);
        if (uses_codebook(ablation)) t.codebook = codebook_supervision_loss(concepts, *in.prototype, w.epsilon);
    }
    if (uses_pcg(ablation) && !in.fidelity_partners.empty()) {
        double acc = 0.0;
        std::size_t same = 0;
        for (const auto& [other, equal] : in.fidelity_partners) {
            acc += fidelity_loss(concepts, other, equal);
            same += equal;
        }
        t.fid = same == 0 ? 0.0 : acc / static_cast<double>(same);
    }
    return compose(t, w, ablation);
}

namespace terms {

Var reconstruction_sparsity(Var x, Var reconstruction, Var concepts, double lambda) {
    return ops::add(ops::mean_squared_error(reconstruction, x), ops::scale(ops::l1_row_mean(concepts), lambda));
}

Var prediction(Var scores, std::span<const std::size_t> labels) { return ops::softmax_cross_entropy(scores, labels); }

Var contrastive(Var anchors, Var positives, Var negatives, std::size_t per_anchor_pos, std::size_t per_anchor_neg,
                double tau, Similarity similarity) {
    return ops::info_nce(anchors, positives, negatives, per_anchor_pos, per_anchor_neg, tau, similarity);
}

Var grounding(Var concepts, Var prototypes) { return ops::mean_squared_error(concepts, prototypes); }

Var fidelity(Var concepts, std::span<const std::size_t> labels) { return ops::same_class_pair_mse(concepts, labels); }

Var codebook(Var concepts, Var codes, double epsilon) {
    return ops::scale(ops::mean_squared_error(concepts, codes), epsilon);
}

} // namespace terms

} // namespace gcl
