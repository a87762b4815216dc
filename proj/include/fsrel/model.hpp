#pragma once

#include <cstdint>
#include <optional>

#include "fsrel/autodiff.hpp"
#include "fsrel/encoders.hpp"
#include "fsrel/metric.hpp"
#include "fsrel/model_config.hpp"
#include "fsrel/nn.hpp"
#include "fsrel/prototype.hpp"
#include "fsrel/types.hpp"

namespace fsrel {

// Every network of the few-shot relation model, owning its parameters.
// Movable, not copyable (components point into the parameter store).
class Model {
public:
    Model(const ModelConfig& config, std::uint64_t init_seed);
    Model(Model&&) noexcept = default;
    Model& operator=(Model&&) noexcept = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelConfig& config() const { return config_; }
    ad::ParameterStore& params() { return *store_; }
    const ad::ParameterStore& params() const { return *store_; }

    bool uses_prototypes() const { return config_.prompt != PromptMode::None; }
    LabelEmbedder label_embedder() const { return LabelEmbedder::from_text_encoder(words, text); }

    VisualEncoder visual;
    ContextEncoder context;
    TextEncoder text;
    EmbeddingTable words;
    PromptTokens prompts;
    PrototypeNetworks nets;
    Aggregator aggregator;
    nn::Mlp proto_head;  // f_pro -> d_final, drives the prototype-only distribution
    ad::Parameter* object_head_w = nullptr;
    ad::Parameter* object_head_b = nullptr;
    ad::Parameter* background = nullptr;  // learnable pseudo-distance d_bg (1 x 1)

private:
    ModelConfig config_;
    std::unique_ptr<ad::ParameterStore> store_;
};

// Candidate-independent encodings of one image on a tape.
struct ImageEncoding {
    int image = -1;
    int num_objects = 0;
    ad::Var f_vis;          // d_vis x n
    ad::Var f_con;          // d_ctx x n(n-1); invalid when n < 2
    ad::Var v_subject;      // d_txt x n, Map_s of every object (prototype mode only)
    ad::Var v_object;       // d_txt x n
    ad::Var agg_subject;    // hidden x n, first aggregator layer blocks
    ad::Var agg_object;     // hidden x n
    ad::Var agg_context;    // hidden x n(n-1)
    ad::Var object_logits;  // |C| x n
};

ImageEncoding encode_image(ad::Tape& tape, const Model& model, const SceneGraphImage& image, int image_index);

// Object-head argmax per object (ties to the lowest category id).
std::vector<CategoryId> predict_object_labels(const ad::Tape& tape, const ImageEncoding& enc);

struct PairEmbedding {
    ad::Var final;       // F, d_final x 1
    ad::Var prototype;   // proto_head(f_pro); invalid without prototypes
    ad::Var f_pro;       // invalid without prototypes
    std::optional<PrototypeAttention> attention_subject, attention_object;
};

// F for the ordered pair (subject, object) conditioned on `bank` (ignored when the
// model has no prototype module).
PairEmbedding embed_pair(ad::Tape& tape, const Model& model, const ImageEncoding& enc, int subject, int object,
                         const PrototypeBank* bank);

struct RelationEmbedding {
    ad::Var vector;
    PredicateId condition;
};

// Full chain for one pair and one candidate predicate.
RelationEmbedding embed_sample(ad::Tape& tape, const Model& model, const SceneGraphImage& image, int image_index,
                               int subject, int object, const PrototypeBank& bank);

// Bank of `predicate` from support triplets in the dataset.
PrototypeBank build_bank_for(ad::Tape& tape, const Model& model, const SceneGraphDataset& ds, PredicateId predicate,
                             std::span<const TripletRef> supports);

SupportLabels support_labels(const SceneGraphDataset& ds, const TripletRef& ref);

}  // namespace fsrel
