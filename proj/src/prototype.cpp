#include "fsrel/prototype.hpp"

#include <array>

#include "fsrel/errors.hpp"

namespace fsrel {

using ad::Var;

PromptTokens make_prompt_tokens(ad::ParameterStore& store, int d_txt, int length, bool trainable) {
    PromptTokens p;
    p.subject = &store.add("prompt.subject", d_txt, length, trainable);
    p.object = &store.add("prompt.object", d_txt, length, trainable);
    return p;
}

std::pair<TokenSequence, TokenSequence> compose_prompts(ad::Tape& tape, const SupportLabels& support,
                                                        const EmbeddingTable& table, const PromptTokens& prompts) {
    const Var ws = table.lookup(tape, support.subject);
    const Var wr = table.lookup(tape, support.predicate);
    const Var wo = table.lookup(tape, support.object);
    const Var ts = tape.param(*prompts.subject);
    const Var to = tape.param(*prompts.object);
    const int L = prompts.length();

    TokenSequence subj;
    const std::array<Var, 3> sp{ws, wr, ts};
    subj.tokens = tape.hstack(sp);
    subj.provenance = {TokenKind::Word, TokenKind::Word};
    subj.provenance.insert(subj.provenance.end(), L, TokenKind::Prompt);

    TokenSequence obj;
    const std::array<Var, 3> op{to, wr, wo};
    obj.tokens = tape.hstack(op);
    obj.provenance.assign(L, TokenKind::Prompt);
    obj.provenance.push_back(TokenKind::Word);
    obj.provenance.push_back(TokenKind::Word);
    return {subj, obj};
}

PrototypeNetworks::PrototypeNetworks(ad::ParameterStore& store, int d_vis, int d_txt, int d_proto, int hidden)
    : gen_subject(store, "gen_s", d_txt, hidden, d_proto),
      gen_object(store, "gen_o", d_txt, hidden, d_proto),
      map_subject(store, "map_s", d_vis, hidden, d_txt),
      map_object(store, "map_o", d_vis, hidden, d_txt),
      att_subject(store, "att_s", d_txt, hidden, 1),
      att_object(store, "att_o", d_txt, hidden, 1) {}

PrototypeBankValues PrototypeBankValues::from(const ad::Tape& tape, const PrototypeBank& bank) {
    return {bank.predicate, tape.value(bank.h_subject), tape.value(bank.h_object), tape.value(bank.u_subject),
            tape.value(bank.u_object)};
}

PrototypeBank PrototypeBankValues::to_tape(ad::Tape& tape) const {
    return {predicate, tape.constant(h_subject), tape.constant(h_object), tape.constant(u_subject),
            tape.constant(u_object), size()};
}

PrototypeBank build_bank(ad::Tape& tape, PredicateId predicate, std::span<const SupportLabels> supports,
                         const EmbeddingTable& table, const PromptTokens& prompts, const TextEncoder& text_encoder,
                         const PrototypeNetworks& nets) {
    if (supports.empty()) throw ContractViolation("build_bank: empty support set");
    std::vector<Var> hs, ho;
    hs.reserve(supports.size());
    ho.reserve(supports.size());
    for (const auto& s : supports) {
        if (s.predicate != predicate)
            throw IntegrityError("build_bank: support labeled with predicate " + std::to_string(s.predicate.value) +
                                 ", bank is for " + std::to_string(predicate.value));
        auto [ps, po] = compose_prompts(tape, s, table, prompts);
        hs.push_back(text_encoder.encode(tape, ps));
        ho.push_back(text_encoder.encode(tape, po));
    }
    PrototypeBank bank;
    bank.predicate = predicate;
    bank.size = static_cast<int>(supports.size());
    bank.h_subject = tape.hstack(hs);
    bank.h_object = tape.hstack(ho);
    bank.u_subject = nets.gen_subject.forward(tape, bank.h_subject);
    bank.u_object = nets.gen_object.forward(tape, bank.h_object);
    return bank;
}

std::pair<Var, Var> project_pair(ad::Tape& tape, Var f_vis_subject, Var f_vis_object, const PrototypeNetworks& nets) {
    return {nets.map_subject.forward(tape, f_vis_subject), nets.map_object.forward(tape, f_vis_object)};
}

PrototypeAttention recombine(ad::Tape& tape, Var raw_scores, Var prototypes) {
    if (tape.value(raw_scores).size() == 0) throw ContractViolation("attend: empty prototype bank");
    if (tape.value(raw_scores).size() != tape.value(prototypes).cols())
        throw ContractViolation("attend: one score per prototype required");
    PrototypeAttention att;
    att.raw = raw_scores;
    att.normalized = tape.softmax(raw_scores);
    att.recombined = tape.matmul(prototypes, tape.transpose(att.normalized));
    return att;
}

PrototypeAttention attend(ad::Tape& tape, Var v, Var h, Var u, const nn::Mlp& att) {
    if (tape.value(h).cols() == 0) throw ContractViolation("attend: empty prototype bank");
    const Var raw = att.forward(tape, tape.hadamard_bcast(v, h));
    return recombine(tape, raw, u);
}

Var prototype_feature(ad::Tape& tape, const PrototypeAttention& subject, const PrototypeAttention& object) {
    const std::array<Var, 2> parts{subject.recombined, object.recombined};
    return tape.vstack(parts);
}

Aggregator::Aggregator(ad::ParameterStore& store, int d_vis, int d_ctx, int d_pro, int hidden, int d_final)
    : mlp_(store, "agg", 2 * d_vis + d_ctx + d_pro, hidden, d_final), d_vis_(d_vis), d_ctx_(d_ctx), d_pro_(d_pro) {}

Var Aggregator::aggregate(ad::Tape& tape, Var f_vis_subject, Var f_vis_object, Var f_con, Var f_pro) const {
    const std::array<Var, 4> parts{f_vis_subject, f_vis_object, f_con, f_pro};
    return mlp_.forward(tape, tape.vstack(parts));
}

Var Aggregator::subject_part(ad::Tape& tape, Var f_vis) const { return tape.linear_cols(mlp_.w1(), 0, f_vis); }

Var Aggregator::object_part(ad::Tape& tape, Var f_vis) const { return tape.linear_cols(mlp_.w1(), d_vis_, f_vis); }

Var Aggregator::context_part(ad::Tape& tape, Var f_con) const {
    return tape.linear_cols(mlp_.w1(), 2 * d_vis_, f_con);
}

Var Aggregator::finish(ad::Tape& tape, Var pair_part, Var f_pro) const {
    Var pre = f_pro.valid() ? tape.add(pair_part, tape.linear_cols(mlp_.w1(), 2 * d_vis_ + d_ctx_, f_pro, &mlp_.b1()))
                            : tape.add_bias(pair_part, mlp_.b1());
    return mlp_.output_from_hidden(tape, mlp_.hidden_from_pre(tape, pre));
}

}  // namespace fsrel
