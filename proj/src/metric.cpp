#include "fsrel/metric.hpp"

#include <array>
#include <cmath>
#include <string>

#include "fsrel/errors.hpp"

namespace fsrel {

using Eigen::VectorXd;

double pair_distance(const VectorXd& query, const VectorXd& support) {
    if (query.size() != support.size())
        throw ContractViolation("pair_distance: dimension mismatch " + std::to_string(query.size()) + " vs " +
                                std::to_string(support.size()));
    return (query - support).squaredNorm();
}

ad::Var pair_distances(ad::Tape& tape, ad::Var query, ad::Var supports) { return tape.sq_dist_cols(query, supports); }

double average_metric(std::span<const double> distances) {
    if (distances.empty()) throw ContractViolation("average_metric: empty support set");
    double sum = 0.0;
    for (double d : distances) sum += d;
    return sum / static_cast<double>(distances.size());
}

VectorXd softmax(const VectorXd& logits) {
    if (logits.size() == 0) throw ContractViolation("softmax: empty input");
    VectorXd e = (logits.array() - logits.maxCoeff()).exp().matrix();
    return e / e.sum();
}

SupportWeights SupportWeights::uniform(std::size_t k) {
    if (k == 0) throw ContractViolation("support weights: empty support set");
    SupportWeights w;
    w.subject_similarity.assign(k, 1.0);
    w.object_similarity.assign(k, 1.0);
    w.product.assign(k, 1.0);
    w.normalized.assign(k, 1.0 / static_cast<double>(k));
    return w;
}

SupportWeights SupportWeights::from_similarities(std::vector<double> subject, std::vector<double> object) {
    if (subject.empty() || subject.size() != object.size())
        throw ContractViolation("support weights: similarity lists must be nonempty and equal length");
    SupportWeights w;
    w.subject_similarity = std::move(subject);
    w.object_similarity = std::move(object);
    const auto k = static_cast<Eigen::Index>(w.subject_similarity.size());
    VectorXd prod(k);
    for (Eigen::Index j = 0; j < k; ++j) prod[j] = w.subject_similarity[j] * w.object_similarity[j];
    const VectorXd norm = softmax(prod);
    w.product.assign(prod.data(), prod.data() + k);
    w.normalized.assign(norm.data(), norm.data() + k);
    return w;
}

double reweighted_metric(std::span<const double> distances, const SupportWeights& weights) {
    if (distances.size() != weights.size()) throw ContractViolation("reweighted_metric: length mismatch");
    if (distances.empty()) throw ContractViolation("reweighted_metric: empty support set");
    double sum = 0.0;
    for (std::size_t j = 0; j < distances.size(); ++j) sum += weights.normalized[j] * distances[j];
    return sum;
}

ad::Var reweighted_metric(ad::Tape& tape, ad::Var distances, const SupportWeights& weights) {
    const auto& d = tape.value(distances);
    if (static_cast<std::size_t>(d.size()) != weights.size())
        throw ContractViolation("reweighted_metric: length mismatch");
    const ad::Mat w = Eigen::Map<const ad::Mat>(weights.normalized.data(), d.rows(), d.cols());
    return tape.dot_const(distances, w);
}

LabelEmbedder::LabelEmbedder(const Eigen::MatrixXd& embeddings) : unit_(embeddings) {
    for (Eigen::Index r = 0; r < unit_.rows(); ++r) {
        const double n = unit_.row(r).norm();
        if (n > 0.0) unit_.row(r) /= n;
    }
}

LabelEmbedder LabelEmbedder::from_text_encoder(const EmbeddingTable& table, const TextEncoder& encoder) {
    ad::Tape tape;
    const ad::Var prompt = table.fixed_prompt(tape);
    Eigen::MatrixXd rows(table.num_categories(), table.categories().value.cols());
    for (int c = 0; c < table.num_categories(); ++c) {
        const std::array<ad::Var, 2> parts{prompt, table.lookup(tape, CategoryId{c})};
        rows.row(c) = tape.value(encoder.encode(tape, tape.hstack(parts))).col(0).transpose();
    }
    return LabelEmbedder(rows);
}

double LabelEmbedder::similarity(CategoryId a, CategoryId b) const {
    if (a.value < 0 || a.value >= num_categories()) throw VocabularyError("unknown category id " + std::to_string(a.value));
    if (b.value < 0 || b.value >= num_categories()) throw VocabularyError("unknown category id " + std::to_string(b.value));
    if (a == b) return 1.0;
    return unit_.row(a.value).dot(unit_.row(b.value));
}

double label_similarity(CategoryId a, CategoryId b, const LabelEmbedder& embedder) { return embedder.similarity(a, b); }

SupportWeights support_weights(const LabelPair& query, std::span<const LabelPair> supports,
                               const LabelEmbedder& embedder) {
    if (supports.empty()) throw ContractViolation("support weights: empty support set");
    std::vector<double> es, eo;
    es.reserve(supports.size());
    eo.reserve(supports.size());
    for (const auto& s : supports) {
        es.push_back(embedder.similarity(query.first, s.first));
        eo.push_back(embedder.similarity(query.second, s.second));
    }
    return SupportWeights::from_similarities(std::move(es), std::move(eo));
}

}  // namespace fsrel
