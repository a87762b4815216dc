#include "fsrel/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fsrel/errors.hpp"

namespace fsrel {

using ad::Mat;
using ad::Var;
using Eigen::VectorXd;

VectorXd object_geometry(const Box& b) {
    VectorXd g(kObjectGeometryDim);
    g << b.x1, b.y1, b.x2, b.y2, b.width(), b.height(), b.area();
    return g;
}

VectorXd pair_geometry(const Box& s, const Box& o) {
    VectorXd g(kPairGeometryDim);
    g << std::min(s.x1, o.x1), std::min(s.y1, o.y1), std::max(s.x2, o.x2), std::max(s.y2, o.y2), o.cx() - s.cx(),
        o.cy() - s.cy(), std::log(o.area() / s.area());
    return g;
}

VectorXd context_mean_term(const SceneGraphImage& image, int subject_index, int object_index, int d_app) {
    VectorXd mean = VectorXd::Zero(d_app);
    int count = 0;
    for (int k = 0; k < static_cast<int>(image.objects.size()); ++k) {
        if (k == subject_index || k == object_index) continue;
        const auto& a = image.objects[k].appearance;
        mean += Eigen::Map<const VectorXd>(a.data(), static_cast<Eigen::Index>(a.size()));
        ++count;
    }
    if (count > 0) mean /= static_cast<double>(count);
    return mean;
}

VisualEncoder::VisualEncoder(ad::ParameterStore& store, int d_app, int hidden, int d_vis)
    : mlp_(store, "vis", d_app + kObjectGeometryDim, hidden, d_vis), d_app_(d_app) {}

VectorXd VisualEncoder::input(const ObjectInstance& obj) const {
    if (static_cast<int>(obj.appearance.size()) != d_app_)
        throw ConfigError("visual encoder: appearance has " + std::to_string(obj.appearance.size()) +
                          " entries, model expects d_app = " + std::to_string(d_app_));
    VectorXd x(d_app_ + kObjectGeometryDim);
    x.head(d_app_) = Eigen::Map<const VectorXd>(obj.appearance.data(), d_app_);
    x.tail(kObjectGeometryDim) = object_geometry(obj.bbox);
    return x;
}

Var VisualEncoder::encode(ad::Tape& tape, const ObjectInstance& obj) const {
    return mlp_.forward(tape, tape.constant(input(obj)));
}

Var VisualEncoder::encode_all(ad::Tape& tape, const SceneGraphImage& image) const {
    if (image.objects.empty()) throw ContractViolation("visual encoder: image has no objects");
    Mat x(d_app_ + kObjectGeometryDim, static_cast<Eigen::Index>(image.objects.size()));
    for (std::size_t k = 0; k < image.objects.size(); ++k) x.col(static_cast<Eigen::Index>(k)) = input(image.objects[k]);
    return mlp_.forward(tape, tape.constant(std::move(x)));
}

ContextEncoder::ContextEncoder(ad::ParameterStore& store, int d_app, int hidden, int d_ctx)
    : mlp_(store, "ctx", d_app + kPairGeometryDim, hidden, d_ctx), d_app_(d_app) {}

VectorXd ContextEncoder::input(const SceneGraphImage& image, int s, int o) const {
    const int n = static_cast<int>(image.objects.size());
    if (s < 0 || s >= n || o < 0 || o >= n) throw IntegrityError("context encoder: object not in image " + image.id);
    if (s == o) throw IntegrityError("context encoder: subject and object must differ");
    VectorXd x(d_app_ + kPairGeometryDim);
    x.head(d_app_) = context_mean_term(image, s, o, d_app_);
    x.tail(kPairGeometryDim) = pair_geometry(image.objects[s].bbox, image.objects[o].bbox);
    return x;
}

Var ContextEncoder::encode(ad::Tape& tape, const SceneGraphImage& image, int s, int o) const {
    return mlp_.forward(tape, tape.constant(input(image, s, o)));
}

Var ContextEncoder::encode_all_pairs(ad::Tape& tape, const SceneGraphImage& image) const {
    const int n = static_cast<int>(image.objects.size());
    if (n < 2) throw ContractViolation("context encoder: image needs at least two objects");
    Mat x(d_app_ + kPairGeometryDim, n * (n - 1));
    for (int s = 0; s < n; ++s)
        for (int o = 0; o < n; ++o)
            if (s != o) x.col(pair_slot(n, s, o)) = input(image, s, o);
    return mlp_.forward(tape, tape.constant(std::move(x)));
}

TextEncoder::TextEncoder(ad::ParameterStore& store, int d_txt, int hidden, int max_length, bool trainable,
                         bool standardize)
    : mlp_(store, "txt", d_txt, hidden, d_txt, trainable), standardize_(standardize) {
    positions_ = &store.add("txt.positions", max_length, 1, trainable);
}

Var TextEncoder::encode(ad::Tape& tape, Var tokens) const {
    const auto n = tape.value(tokens).cols();
    if (n == 0) throw ContractViolation("text encoder: empty token sequence");
    if (n > positions_->value.rows())
        throw ContractViolation("text encoder: sequence longer than the position table");
    Var weights = tape.softmax(tape.param_head(*positions_, n));
    Var pooled = tape.matmul(tokens, weights);
    if (standardize_ && tape.value(pooled).rows() > 1) pooled = tape.standardize_cols(pooled);
    return mlp_.forward(tape, pooled);
}

Var TextEncoder::encode(ad::Tape& tape, const TokenSequence& seq) const {
    if (seq.length() == 0 || !seq.tokens.valid()) throw ContractViolation("text encoder: empty token sequence");
    return encode(tape, seq.tokens);
}

EmbeddingTable::EmbeddingTable(ad::ParameterStore& store, int num_categories, int num_predicates, int d_txt,
                               bool trainable)
    : num_categories_(num_categories), num_predicates_(num_predicates) {
    categories_ = &store.add("words.categories", num_categories, d_txt, trainable);
    predicates_ = &store.add("words.predicates", num_predicates, d_txt, trainable);
    fixed_ = &store.add("words.fixed_prompt", d_txt, kFixedPromptTokens, false);
}

Var EmbeddingTable::lookup(ad::Tape& tape, CategoryId c) const {
    if (c.value < 0 || c.value >= num_categories_)
        throw VocabularyError("unknown category id " + std::to_string(c.value));
    return tape.param_row(*categories_, c.value);
}

Var EmbeddingTable::lookup(ad::Tape& tape, PredicateId p) const {
    if (p.value < 0 || p.value >= num_predicates_)
        throw VocabularyError("unknown predicate id " + std::to_string(p.value));
    return tape.param_row(*predicates_, p.value);
}

Var EmbeddingTable::fixed_prompt(ad::Tape& tape) const { return tape.param(*fixed_); }

}  // namespace fsrel
