#include "fsrel/model.hpp"

#include <array>
#include <random>

#include "fsrel/errors.hpp"

namespace fsrel {

using ad::Mat;
using ad::Var;

Model::Model(const ModelConfig& config, std::uint64_t init_seed)
    : config_(config), store_(std::make_unique<ad::ParameterStore>()) {
    config_.validate();
    auto& s = *store_;
    const auto& c = config_;
    const int max_len = std::max(c.prompt_length + 2, kFixedPromptTokens + 1);
    visual = VisualEncoder(s, c.d_app, c.hidden, c.d_vis);
    context = ContextEncoder(s, c.d_app, c.hidden, c.d_ctx);
    text = TextEncoder(s, c.d_txt, c.text_hidden, max_len, !c.freeze_text_encoder, c.text_standardize);
    words = EmbeddingTable(s, c.num_categories, c.num_predicates, c.d_txt, true);
    prompts = make_prompt_tokens(s, c.d_txt, c.prompt_length, c.prompt == PromptMode::Learnable);
    nets = PrototypeNetworks(s, c.d_vis, c.d_txt, c.d_proto, c.hidden);
    aggregator = Aggregator(s, c.d_vis, c.d_ctx, 2 * c.d_proto, c.hidden, c.d_final);
    proto_head = nn::Mlp(s, "proto_head", 2 * c.d_proto, c.hidden, c.d_final);
    object_head_w = &s.add("obj_head.w", c.num_categories, c.d_vis + c.d_ctx);
    object_head_b = &s.add("obj_head.b", c.num_categories, 1);
    background = &s.add("background.distance", 1, 1);

    std::mt19937_64 rng(init_seed);
    visual.mlp().init(rng);
    context.mlp().init(rng);
    text.mlp().init(rng);
    nn::init_normal(text.position_logits(), rng, 0.5);
    nn::init_normal(words.categories(), rng, c.word_init_std);
    nn::init_normal(words.predicates(), rng, c.word_init_std);
    nn::init_normal(words.fixed_tokens(), rng, c.word_init_std);
    nn::init_normal(*prompts.subject, rng, c.prompt_init_std);
    nn::init_normal(*prompts.object, rng, c.prompt_init_std);
    for (const nn::Mlp* m : {&nets.gen_subject, &nets.gen_object, &nets.map_subject, &nets.map_object,
                             &nets.att_subject, &nets.att_object})
        m->init(rng);
    aggregator.mlp().init(rng);
    proto_head.init(rng);
    nn::init_lecun(*object_head_w, rng);
    object_head_b->value.setZero();
    background->value(0, 0) = c.init_bg_distance;
    store_->zero_grad();
}

ImageEncoding encode_image(ad::Tape& tape, const Model& model, const SceneGraphImage& image, int image_index) {
    ImageEncoding enc;
    enc.image = image_index;
    const int n = static_cast<int>(image.objects.size());
    enc.num_objects = n;
    enc.f_vis = model.visual.encode_all(tape, image);
    const auto& cfg = model.config();

    Var pooled;
    if (n >= 2) {
        enc.f_con = model.context.encode_all_pairs(tape, image);
        Mat avg = Mat::Zero(n * (n - 1), n);
        for (int s = 0; s < n; ++s)
            for (int o = 0; o < n; ++o)
                if (s != o) avg(pair_slot(n, s, o), s) = 1.0 / static_cast<double>(n - 1);
        pooled = tape.matmul(enc.f_con, tape.constant(std::move(avg)));
        enc.agg_context = model.aggregator.context_part(tape, enc.f_con);
    } else {
        pooled = tape.constant(Mat::Zero(cfg.d_ctx, n));
    }
    const std::array<Var, 2> head_in{enc.f_vis, pooled};
    enc.object_logits = tape.affine(*model.object_head_w, tape.vstack(head_in), model.object_head_b);

    enc.agg_subject = model.aggregator.subject_part(tape, enc.f_vis);
    enc.agg_object = model.aggregator.object_part(tape, enc.f_vis);
    if (model.uses_prototypes()) {
        auto [vs, vo] = project_pair(tape, enc.f_vis, enc.f_vis, model.nets);
        enc.v_subject = vs;
        enc.v_object = vo;
    }
    return enc;
}

std::vector<CategoryId> predict_object_labels(const ad::Tape& tape, const ImageEncoding& enc) {
    const Mat& logits = tape.value(enc.object_logits);
    std::vector<CategoryId> out;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        Eigen::Index best = 0;
        for (Eigen::Index r = 1; r < logits.rows(); ++r)
            if (logits(r, c) > logits(best, c)) best = r;
        out.emplace_back(static_cast<int>(best));
    }
    return out;
}

PairEmbedding embed_pair(ad::Tape& tape, const Model& model, const ImageEncoding& enc, int subject, int object,
                         const PrototypeBank* bank) {
    const int n = enc.num_objects;
    if (subject < 0 || subject >= n || object < 0 || object >= n || subject == object)
        throw IntegrityError("embed_pair: invalid object pair");
    PairEmbedding out;
    const int slot = pair_slot(n, subject, object);
    Var pair_part = tape.add(tape.add(tape.col(enc.agg_subject, subject), tape.col(enc.agg_object, object)),
                             tape.col(enc.agg_context, slot));
    if (model.uses_prototypes()) {
        if (!bank) throw ContractViolation("embed_pair: prototype model needs a candidate bank");
        auto att_s = attend(tape, tape.col(enc.v_subject, subject), bank->h_subject, bank->u_subject,
                            model.nets.att_subject);
        auto att_o = attend(tape, tape.col(enc.v_object, object), bank->h_object, bank->u_object,
                            model.nets.att_object);
        out.f_pro = prototype_feature(tape, att_s, att_o);
        out.attention_subject = att_s;
        out.attention_object = att_o;
        out.final = model.aggregator.finish(tape, pair_part, out.f_pro);
        out.prototype = model.proto_head.forward(tape, out.f_pro);
    } else {
        out.final = model.aggregator.finish(tape, pair_part, Var{});
    }
    return out;
}

RelationEmbedding embed_sample(ad::Tape& tape, const Model& model, const SceneGraphImage& image, int image_index,
                               int subject, int object, const PrototypeBank& bank) {
    const ImageEncoding enc = encode_image(tape, model, image, image_index);
    return {embed_pair(tape, model, enc, subject, object, &bank).final, bank.predicate};
}

SupportLabels support_labels(const SceneGraphDataset& ds, const TripletRef& ref) {
    const auto& img = ds.images.at(ref.image);
    const auto& rel = img.relations.at(ref.triplet);
    const PairRef p = pair_of(ds, ref);
    return {img.objects[p.subject].category, rel.predicate, img.objects[p.object].category};
}

PrototypeBank build_bank_for(ad::Tape& tape, const Model& model, const SceneGraphDataset& ds, PredicateId predicate,
                             std::span<const TripletRef> supports) {
    std::vector<SupportLabels> labels;
    for (const auto& ref : supports) labels.push_back(support_labels(ds, ref));
    return build_bank(tape, predicate, labels, model.words, model.prompts, model.text, model.nets);
}

}  // namespace fsrel
