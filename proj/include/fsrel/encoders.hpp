#pragma once

#include <vector>

#include "fsrel/autodiff.hpp"
#include "fsrel/nn.hpp"
#include "fsrel/types.hpp"

namespace fsrel {

inline constexpr int kObjectGeometryDim = 7;  // x1, y1, x2, y2, w, h, area
inline constexpr int kPairGeometryDim = 7;    // union box, dx, dy, log size ratio
inline constexpr int kFixedPromptTokens = 5;  // "this is a photo of"

Eigen::VectorXd object_geometry(const Box& b);
// Directional: dx, dy are object center minus subject center, and the size term
// is log(area_o / area_s).
Eigen::VectorXd pair_geometry(const Box& s, const Box& o);
// Mean appearance over the image's objects other than s and o; zero if none.
Eigen::VectorXd context_mean_term(const SceneGraphImage& image, int subject_index, int object_index, int d_app);

// Column slot of the ordered pair (s, o) among the n(n-1) pairs of an n-object image,
// subject-major.
inline int pair_slot(int n, int s, int o) { return s * (n - 1) + (o < s ? o : o - 1); }

class VisualEncoder {
public:
    VisualEncoder() = default;
    VisualEncoder(ad::ParameterStore& store, int d_app, int hidden, int d_vis);

    Eigen::VectorXd input(const ObjectInstance& obj) const;
    ad::Var encode(ad::Tape& tape, const ObjectInstance& obj) const;
    // d_vis x n, one column per object.
    ad::Var encode_all(ad::Tape& tape, const SceneGraphImage& image) const;

    nn::Mlp& mlp() { return mlp_; }
    const nn::Mlp& mlp() const { return mlp_; }

private:
    nn::Mlp mlp_;
    int d_app_ = 0;
};

class ContextEncoder {
public:
    ContextEncoder() = default;
    ContextEncoder(ad::ParameterStore& store, int d_app, int hidden, int d_ctx);

    Eigen::VectorXd input(const SceneGraphImage& image, int subject_index, int object_index) const;
    ad::Var encode(ad::Tape& tape, const SceneGraphImage& image, int subject_index, int object_index) const;
    // d_ctx x n(n-1), columns ordered by pair_slot().
    ad::Var encode_all_pairs(ad::Tape& tape, const SceneGraphImage& image) const;

    nn::Mlp& mlp() { return mlp_; }
    const nn::Mlp& mlp() const { return mlp_; }

private:
    nn::Mlp mlp_;
    int d_app_ = 0;
};

enum class TokenKind { Word, Prompt };

struct TokenSequence {
    ad::Var tokens;  // d_txt x n
    std::vector<TokenKind> provenance;

    int length() const { return static_cast<int>(provenance.size()); }
};

// Position-weighted pooling (softmax over learned per-position logits), per-column
// standardization, then a two-layer MLP. Any encoder with the same signature can
// replace it.
class TextEncoder {
public:
    TextEncoder() = default;
    TextEncoder(ad::ParameterStore& store, int d_txt, int hidden, int max_length, bool trainable,
                bool standardize = true);

    ad::Var encode(ad::Tape& tape, const TokenSequence& seq) const;
    ad::Var encode(ad::Tape& tape, ad::Var tokens) const;

    nn::Mlp& mlp() { return mlp_; }
    const nn::Mlp& mlp() const { return mlp_; }
    ad::Parameter& position_logits() const { return *positions_; }
    int max_length() const { return static_cast<int>(positions_->value.rows()); }
    bool standardizes() const { return standardize_; }
    void set_standardize(bool on) { standardize_ = on; }

private:
    ad::Parameter* positions_ = nullptr;
    nn::Mlp mlp_;
    bool standardize_ = true;
};

// Word vectors for every category and predicate, plus the frozen tokens of the
// fixed label prompt.
class EmbeddingTable {
public:
    EmbeddingTable() = default;
    EmbeddingTable(ad::ParameterStore& store, int num_categories, int num_predicates, int d_txt, bool trainable);

    ad::Var lookup(ad::Tape& tape, CategoryId c) const;
    ad::Var lookup(ad::Tape& tape, PredicateId p) const;
    ad::Var fixed_prompt(ad::Tape& tape) const;  // d_txt x kFixedPromptTokens

    int num_categories() const { return num_categories_; }
    int num_predicates() const { return num_predicates_; }
    ad::Parameter& categories() const { return *categories_; }
    ad::Parameter& predicates() const { return *predicates_; }
    ad::Parameter& fixed_tokens() const { return *fixed_; }

private:
    ad::Parameter* categories_ = nullptr;  // rows: categories, cols: d_txt
    ad::Parameter* predicates_ = nullptr;
    ad::Parameter* fixed_ = nullptr;  // d_txt x kFixedPromptTokens
    int num_categories_ = 0;
    int num_predicates_ = 0;
};

}  // namespace fsrel
