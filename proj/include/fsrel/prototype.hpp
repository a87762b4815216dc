#pragma once

#include <span>
#include <utility>
#include <vector>

#include "fsrel/autodiff.hpp"
#include "fsrel/encoders.hpp"
#include "fsrel/nn.hpp"
#include "fsrel/types.hpp"

namespace fsrel {

// Learnable context tokens T^s and T^o, each d_txt x L (one column per token).
struct PromptTokens {
    ad::Parameter* subject = nullptr;
    ad::Parameter* object = nullptr;

    int length() const { return static_cast<int>(subject->value.cols()); }
};

PromptTokens make_prompt_tokens(ad::ParameterStore& store, int d_txt, int length, bool trainable);

// Category labels of one support triplet.
struct SupportLabels {
    CategoryId subject;
    PredicateId predicate;
    CategoryId object;
};

// Subject sequence [W[s], W[r], T^s_1..L]; object sequence [T^o_1..L, W[r], W[o]].
std::pair<TokenSequence, TokenSequence> compose_prompts(ad::Tape& tape, const SupportLabels& support,
                                                        const EmbeddingTable& table, const PromptTokens& prompts);

// The decomposed generator/projection/attention networks, one per side.
struct PrototypeNetworks {
    nn::Mlp gen_subject, gen_object;  // d_txt -> d_proto
    nn::Mlp map_subject, map_object;  // d_vis -> d_txt
    nn::Mlp att_subject, att_object;  // d_txt -> 1

    PrototypeNetworks() = default;
    PrototypeNetworks(ad::ParameterStore& store, int d_vis, int d_txt, int d_proto, int hidden);
};

// Per-support text embeddings and prototypes, one column per support (K columns).
struct PrototypeBank {
    PredicateId predicate;
    ad::Var h_subject, h_object;  // d_txt x K
    ad::Var u_subject, u_object;  // d_proto x K
    int size = 0;
};

// Same content as PrototypeBank, detached from any tape (for evaluation reuse).
struct PrototypeBankValues {
    PredicateId predicate;
    ad::Mat h_subject, h_object, u_subject, u_object;

    int size() const { return static_cast<int>(h_subject.cols()); }
    static PrototypeBankValues from(const ad::Tape& tape, const PrototypeBank& bank);
    PrototypeBank to_tape(ad::Tape& tape) const;
};

PrototypeBank build_bank(ad::Tape& tape, PredicateId predicate, std::span<const SupportLabels> supports,
                         const EmbeddingTable& table, const PromptTokens& prompts, const TextEncoder& text_encoder,
                         const PrototypeNetworks& nets);

// v_s = Map_s(f^v_s), v_o = Map_o(f^v_o); inputs may hold several columns.
std::pair<ad::Var, ad::Var> project_pair(ad::Tape& tape, ad::Var f_vis_subject, ad::Var f_vis_object,
                                         const PrototypeNetworks& nets);

struct PrototypeAttention {
    ad::Var raw;         // 1 x K
    ad::Var normalized;  // 1 x K, softmax of raw
    ad::Var recombined;  // d_proto x 1
};

// normalized = softmax(raw), recombined = prototypes * normalized^T.
PrototypeAttention recombine(ad::Tape& tape, ad::Var raw_scores, ad::Var prototypes);

// raw_k = Att(v ⊙ h_k), then recombine over the bank side.
PrototypeAttention attend(ad::Tape& tape, ad::Var v, ad::Var h, ad::Var u, const nn::Mlp& att);

ad::Var prototype_feature(ad::Tape& tape, const PrototypeAttention& subject, const PrototypeAttention& object);

// F = MLP(f^v_s ⊕ f^v_o ⊕ f^con ⊕ f^pro). The first layer can also be split into a
// candidate-independent pair part and the prototype part; both routes agree exactly
// up to floating-point summation order.
class Aggregator {
public:
    Aggregator() = default;
    Aggregator(ad::ParameterStore& store, int d_vis, int d_ctx, int d_pro, int hidden, int d_final);

    ad::Var aggregate(ad::Tape& tape, ad::Var f_vis_subject, ad::Var f_vis_object, ad::Var f_con,
                      ad::Var f_pro) const;

    // Subject, object and context blocks of the first layer, without bias.
    ad::Var subject_part(ad::Tape& tape, ad::Var f_vis) const;
    ad::Var object_part(ad::Tape& tape, ad::Var f_vis) const;
    ad::Var context_part(ad::Tape& tape, ad::Var f_con) const;
    // Completes the forward pass from the summed pair part; f_pro may be invalid (zero block).
    ad::Var finish(ad::Tape& tape, ad::Var pair_part, ad::Var f_pro) const;

    nn::Mlp& mlp() { return mlp_; }
    const nn::Mlp& mlp() const { return mlp_; }

private:
    nn::Mlp mlp_;
    int d_vis_ = 0, d_ctx_ = 0, d_pro_ = 0;
};

}  // namespace fsrel
