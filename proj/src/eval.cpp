#include "fsrel/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <set>
#include <thread>
#include <tuple>

#include "fsrel/encoders.hpp"
#include "fsrel/errors.hpp"
#include "fsrel/model.hpp"

namespace fsrel {

using ad::Mat;
using ad::Var;
using nlohmann::json;

std::vector<GroundTruthTriplet> collect_ground_truth(const SceneGraphDataset& ds, std::span<const PredicateId> predicates,
                                                     const SupportIndex& supports) {
    const std::set<PredicateId> wanted(predicates.begin(), predicates.end());
    std::vector<GroundTruthTriplet> gt;
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        const auto& img = ds.images[i];
        if (img.split != ImageSplit::Test) continue;
        for (std::size_t r = 0; r < img.relations.size(); ++r) {
            const auto& rel = img.relations[r];
            if (!wanted.count(rel.predicate)) continue;
            const TripletRef ref{static_cast<int>(i), static_cast<int>(r)};
            if (supports.is_support(ref)) continue;
            const PairRef p = pair_of(ds, ref);
            gt.push_back({p.image, p.subject, p.object, img.objects[p.subject].category,
                          img.objects[p.object].category, rel.predicate});
        }
    }
    return gt;
}

std::vector<TripletPrediction> apply_graph_constraint(std::span<const TripletPrediction> preds) {
    std::map<std::tuple<int, int, int>, TripletPrediction> best;
    for (const auto& p : preds) {
        const auto key = std::make_tuple(p.image, p.subject, p.object);
        auto it = best.find(key);
        if (it == best.end()) {
            best.emplace(key, p);
        } else if (p.score > it->second.score ||
                   (p.score == it->second.score && p.predicate < it->second.predicate)) {
            it->second = p;
        }
    }
    std::vector<TripletPrediction> out;
    out.reserve(best.size());
    for (auto& [_, p] : best) out.push_back(p);
    return out;
}

void rank_predictions(std::vector<TripletPrediction>& preds) {
    std::stable_sort(preds.begin(), preds.end(), [](const TripletPrediction& a, const TripletPrediction& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.predicate != b.predicate) return a.predicate < b.predicate;
        return a.pair_index < b.pair_index;
    });
}

SplitRecall mean_recall(std::span<const TripletPrediction> preds, std::span<const GroundTruthTriplet> gt,
                        std::span<const int> k_list, std::span<const PredicateId> split_categories) {
    for (int k : k_list)
        if (k < 1) throw ConfigError("recall cutoff K must be positive");
    const std::set<PredicateId> cats(split_categories.begin(), split_categories.end());

    std::map<int, std::vector<TripletPrediction>> per_image;
    for (const auto& p : apply_graph_constraint(preds)) per_image[p.image].push_back(p);
    // image -> (subject, object) -> predictions in rank order
    std::map<int, std::vector<TripletPrediction>> ranked;
    for (auto& [img, list] : per_image) {
        rank_predictions(list);
        ranked.emplace(img, std::move(list));
    }

    SplitRecall out;
    std::map<PredicateId, std::map<int, int>> hits;
    for (const auto& g : gt) {
        if (!cats.count(g.predicate)) continue;
        ++out.gt_counts[g.predicate];
        auto& h = hits[g.predicate];
        const auto it = ranked.find(g.image);
        std::size_t rank = std::numeric_limits<std::size_t>::max();
        if (it != ranked.end()) {
            const auto& list = it->second;
            for (std::size_t i = 0; i < list.size(); ++i) {
                const auto& p = list[i];
                if (p.subject == g.subject && p.object == g.object && p.predicate == g.predicate &&
                    p.subject_label == g.subject_label && p.object_label == g.object_label) {
                    rank = i;
                    break;
                }
            }
        }
        for (int k : k_list) h[k] += rank < static_cast<std::size_t>(k) ? 1 : 0;
    }

    out.evaluated_categories = static_cast<int>(out.gt_counts.size());
    out.available = out.evaluated_categories > 0;
    for (const auto& [pred, total] : out.gt_counts)
        for (int k : k_list) out.per_predicate[pred][k] = static_cast<double>(hits[pred][k]) / total;
    if (out.available)
        for (int k : k_list) {
            double sum = 0.0;
            for (const auto& [pred, r] : out.per_predicate) sum += r.at(k);
            out.mean_recall[k] = sum / out.evaluated_categories;
        }
    return out;
}

EvalBanks::EvalBanks(const Model& model, const SceneGraphDataset& ds, const SupportIndex& supports) {
    for (const auto& [pred, refs] : supports.entries) {
        if (refs.empty()) throw ProtocolError("empty support set for '" + ds.predicate_name(pred) + "'");
        ad::Tape tape;
        PredicateBank bank;
        bank.predicate = pred;
        std::optional<PrototypeBank> live;
        if (model.uses_prototypes()) {
            live = build_bank_for(tape, model, ds, pred, refs);
            bank.prototypes = PrototypeBankValues::from(tape, *live);
        }
        bank.support_final.resize(model.config().d_final, static_cast<Eigen::Index>(refs.size()));
        for (std::size_t j = 0; j < refs.size(); ++j) {
            const PairRef p = pair_of(ds, refs[j]);
            const auto& img = ds.images[p.image];
            const auto enc = encode_image(tape, model, img, p.image);
            const auto emb = embed_pair(tape, model, enc, p.subject, p.object, live ? &*live : nullptr);
            bank.support_final.col(static_cast<Eigen::Index>(j)) = tape.value(emb.final).col(0);
            bank.support_labels.emplace_back(img.objects[p.subject].category, img.objects[p.object].category);
        }
        banks_.emplace(pred, std::move(bank));
    }
}

const PredicateBank& EvalBanks::at(PredicateId p) const {
    const auto it = banks_.find(p);
    if (it == banks_.end()) throw ProtocolError("no support bank for predicate id " + std::to_string(p.value));
    return it->second;
}

std::vector<PredicateId> EvalBanks::predicates() const {
    std::vector<PredicateId> out;
    for (const auto& [p, _] : banks_) out.push_back(p);
    return out;
}

std::vector<TripletPrediction> score_image(const Model& model, const SceneGraphDataset& ds, int image_index,
                                           const EvalBanks& banks, std::span<const PredicateId> predicates,
                                           const LabelEmbedder& labels, Task task) {
    const auto& img = ds.images.at(image_index);
    const int n = static_cast<int>(img.objects.size());
    std::vector<TripletPrediction> out;
    if (n < 2 || predicates.empty()) return out;
    std::vector<const PredicateBank*> pb;
    for (auto p : predicates) pb.push_back(&banks.at(p));

    ad::Tape tape;
    const auto enc = encode_image(tape, model, img, image_index);
    std::vector<CategoryId> obj_labels;
    if (task == Task::SGCls) {
        obj_labels = predict_object_labels(tape, enc);
    } else {
        for (const auto& o : img.objects) obj_labels.push_back(o.category);
    }
    std::vector<std::optional<PrototypeBank>> live(pb.size());
    std::vector<Var> support_final(pb.size());
    for (std::size_t r = 0; r < pb.size(); ++r) {
        if (pb[r]->prototypes) live[r] = pb[r]->prototypes->to_tape(tape);
        support_final[r] = tape.constant(pb[r]->support_final);
    }
    const auto cfg = model.config();
    const double d_bg = model.background->value(0, 0);
    const auto R = static_cast<Eigen::Index>(pb.size());
    Eigen::VectorXd logits(R + 1);
    for (int s = 0; s < n; ++s)
        for (int o = 0; o < n; ++o) {
            if (s == o) continue;
            const LabelPair query{obj_labels[s], obj_labels[o]};
            for (Eigen::Index r = 0; r < R; ++r) {
                const auto emb = embed_pair(tape, model, enc, s, o, live[r] ? &*live[r] : nullptr);
                const Mat d = tape.value(pair_distances(tape, emb.final, support_final[r]));
                const auto& sl = pb[r]->support_labels;
                const SupportWeights w = cfg.metric == MetricMode::Reweight ? support_weights(query, sl, labels)
                                                                            : SupportWeights::uniform(sl.size());
                logits[r] = -reweighted_metric(std::span<const double>(d.data(), static_cast<std::size_t>(d.size())), w);
            }
            logits[R] = -d_bg;
            const Eigen::VectorXd prob = softmax(logits);
            const int slot = pair_slot(n, s, o);
            for (Eigen::Index r = 0; r < R; ++r)
                out.push_back({image_index, s, o, obj_labels[s], obj_labels[o], pb[r]->predicate, prob[r], slot});
        }
    return out;
}

int eval_worker_count() {
    if (const char* env = std::getenv("FSREL_NUM_WORKERS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v >= 1) return static_cast<int>(v);
        throw ConfigError("FSREL_NUM_WORKERS must be a positive integer");
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

EvalReport evaluate(const SceneGraphDataset& ds, const SplitSpec& split, const SupportIndex& supports,
                    const Model& model, Task task, const EvaluateOptions& options) {
    EvalReport report;
    report.task = task;
    report.shots = supports.shots;
    report.k_list = options.k_list;
    std::sort(report.k_list.begin(), report.k_list.end());
    for (const auto& [pred, _] : supports.entries)
        if (!split.is_base(pred) && !split.is_novel(pred))
            throw ProtocolError("support set for '" + ds.predicate_name(pred) + "' is outside the split");
    for (auto p : split.all_predicates()) {
        if (supports.entries.count(p))
            report.evaluated.push_back(p);
        else
            report.excluded.push_back(p);
    }

    const EvalBanks banks(model, ds, supports);
    const LabelEmbedder labels = model.label_embedder();
    std::vector<int> images;
    for (std::size_t i = 0; i < ds.images.size(); ++i)
        if (ds.images[i].split == ImageSplit::Test) images.push_back(static_cast<int>(i));

    std::vector<std::vector<TripletPrediction>> per_image(images.size());
    const int workers = std::max(1, std::min<int>(options.workers > 0 ? options.workers : eval_worker_count(),
                                                  static_cast<int>(images.size())));
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    const auto work = [&]() {
        try {
            for (std::size_t i = next++; i < images.size(); i = next++)
                per_image[i] = score_image(model, ds, images[i], banks, report.evaluated, labels, task);
        } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            next = images.size();
        }
    };
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    std::vector<TripletPrediction> preds;
    for (auto& v : per_image) preds.insert(preds.end(), v.begin(), v.end());
    std::vector<PredicateId> base, novel;
    for (auto p : report.evaluated) (split.is_base(p) ? base : novel).push_back(p);
    const auto gt = collect_ground_truth(ds, report.evaluated, supports);
    report.base = mean_recall(preds, gt, report.k_list, base);
    report.novel = mean_recall(preds, gt, report.k_list, novel);
    if (options.predictions_out) *options.predictions_out = std::move(preds);
    return report;
}

namespace {

json split_block(const SplitRecall& s, std::span<const int> k_list) {
    json j;
    j["available"] = s.available;
    j["evaluated_categories"] = s.evaluated_categories;
    for (int k : k_list) {
        const std::string key = "mR@" + std::to_string(k);
        if (s.available)
            j[key] = s.mean_recall.at(k);
        else
            j[key] = nullptr;
    }
    return j;
}

}  // namespace

json eval_report_to_json(const SceneGraphDataset& ds, const EvalReport& r) {
    json j;
    j["task"] = to_string(r.task);
    j["K"] = r.shots;
    j["graph_constraint"] = true;
    j["scoring"] = "joint softmax over all evaluated base and novel predicates plus background";
    j["base"] = split_block(r.base, r.k_list);
    j["novel"] = split_block(r.novel, r.k_list);
    json per = json::object();
    for (const auto* s : {&r.base, &r.novel}) {
        const char* name = s == &r.base ? "base" : "novel";
        for (const auto& [pred, recalls] : s->per_predicate) {
            json e;
            e["split"] = name;
            e["gt"] = s->gt_counts.at(pred);
            for (const auto& [k, v] : recalls) e["recall@" + std::to_string(k)] = v;
            per[ds.predicate_name(pred)] = std::move(e);
        }
    }
    j["per_predicate"] = std::move(per);
    json excluded = json::array();
    for (auto p : r.excluded) excluded.push_back(ds.predicate_name(p));
    j["excluded_predicates"] = std::move(excluded);
    return j;
}

json prediction_to_json(const SceneGraphDataset& ds, const TripletPrediction& p) {
    const auto& img = ds.images.at(p.image);
    return {{"image", img.id},
            {"subject", img.objects.at(p.subject).id},
            {"subject_label", ds.category_name(p.subject_label)},
            {"object", img.objects.at(p.object).id},
            {"object_label", ds.category_name(p.object_label)},
            {"predicate", ds.predicate_name(p.predicate)},
            {"score", p.score}};
}

}  // namespace fsrel
