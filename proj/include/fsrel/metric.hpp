#pragma once

#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fsrel/autodiff.hpp"
#include "fsrel/encoders.hpp"
#include "fsrel/types.hpp"

namespace fsrel {

// Squared Euclidean distance ||q - s||^2.
double pair_distance(const Eigen::VectorXd& query, const Eigen::VectorXd& support);
// 1 x K squared distances between one query embedding and K support embeddings (columns).
ad::Var pair_distances(ad::Tape& tape, ad::Var query, ad::Var supports);

double average_metric(std::span<const double> distances);

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

struct SupportWeights {
    std::vector<double> subject_similarity;  // e^s
    std::vector<double> object_similarity;   // e^o
    std::vector<double> product;             // ê = e^s * e^o
    std::vector<double> normalized;          // ẽ = softmax(ê)

    std::size_t size() const { return normalized.size(); }
    static SupportWeights uniform(std::size_t k);
    // Builds ê and ẽ from the two similarity lists.
    static SupportWeights from_similarities(std::vector<double> subject, std::vector<double> object);
};

double reweighted_metric(std::span<const double> distances, const SupportWeights& weights);
ad::Var reweighted_metric(ad::Tape& tape, ad::Var distances, const SupportWeights& weights);

// Unit-normalized text embeddings of every category under the fixed label prompt.
class LabelEmbedder {
public:
    LabelEmbedder() = default;
    // Rows of `embeddings` are raw category embeddings; they are normalized here.
    explicit LabelEmbedder(const Eigen::MatrixXd& embeddings);
    // Encodes [fixed prompt tokens, W[c]] for every category; values are detached.
    static LabelEmbedder from_text_encoder(const EmbeddingTable& table, const TextEncoder& encoder);

    int num_categories() const { return static_cast<int>(unit_.rows()); }
    const Eigen::MatrixXd& unit_embeddings() const { return unit_; }
    double similarity(CategoryId a, CategoryId b) const;

private:
    Eigen::MatrixXd unit_;
};

// Cosine similarity of the two label embeddings; 1 for identical ids.
double label_similarity(CategoryId a, CategoryId b, const LabelEmbedder& embedder);

using LabelPair = std::pair<CategoryId, CategoryId>;  // (subject, object)

SupportWeights support_weights(const LabelPair& query, std::span<const LabelPair> supports,
                               const LabelEmbedder& embedder);

}  // namespace fsrel
