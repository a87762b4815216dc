#include <cmath>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "recall_oracle.hpp"

#include "fsrel/errors.hpp"
#include "fsrel/eval.hpp"
#include "fsrel/sgdata.hpp"

using namespace fsrel;

namespace {

struct EvalFixture {
    SyntheticWorld world;
    SplitSpec split;
    SupportIndex supports;
    ModelConfig cfg;

    explicit EvalFixture(std::uint64_t seed = 4, int shots = 2)
        : world(generate_synthetic_world(testing::small_world(100), seed)),
          split(make_split(world.dataset, 4, 2, 0)),
          supports(sample_support_sets(world.dataset, split, shots, 1)),
          cfg(testing::tiny_model_config(world.dataset.num_categories(), world.dataset.num_predicates(),
                                         world.dataset.appearance_dim)) {}

    const SceneGraphDataset& ds() const { return world.dataset; }

    int test_image_with(int min_objects) const {
        for (std::size_t i = 0; i < ds().images.size(); ++i)
            if (ds().images[i].split == ImageSplit::Test && static_cast<int>(ds().images[i].objects.size()) >= min_objects)
                return static_cast<int>(i);
        return -1;
    }
};

TripletPrediction pred(int image, int s, int o, int sl, int ol, int p, double score, int slot) {
    return {image, s, o, CategoryId{sl}, CategoryId{ol}, PredicateId{p}, score, slot};
}

GroundTruthTriplet truth(int image, int s, int o, int sl, int ol, int p) {
    return {image, s, o, CategoryId{sl}, CategoryId{ol}, PredicateId{p}};
}

}  // namespace

TEST_CASE("two-object image yields two ordered pairs") {
    EvalFixture fx;
    SceneGraphDataset ds = fx.ds();
    const int idx = fx.test_image_with(2);
    REQUIRE(idx >= 0);
    ds.images[idx].objects.resize(2);
    ds.images[idx].relations.clear();
    ds.reindex();
    Model model(fx.cfg, 1);
    const EvalBanks banks(model, fx.ds(), fx.supports);
    const auto preds_ids = banks.predicates();
    const auto out = score_image(model, ds, idx, banks, preds_ids, model.label_embedder(), Task::PredCls);
    std::set<std::pair<int, int>> pairs;
    for (const auto& p : out) pairs.insert({p.subject, p.object});
    CHECK(pairs.size() == 2);
    CHECK(out.size() == 2 * preds_ids.size());
}

TEST_CASE("score_image matches an independent softmax oracle") {
    EvalFixture fx;
    auto cfg = fx.cfg;
    cfg.metric = MetricMode::Average;
    Model model(cfg, 2);
    const EvalBanks banks(model, fx.ds(), fx.supports);
    const auto ids = banks.predicates();
    const int idx = fx.test_image_with(3);
    const auto out = score_image(model, fx.ds(), idx, banks, ids, model.label_embedder(), Task::PredCls);

    // recompute from scratch on one tape
    ad::Tape t;
    const auto& img = fx.ds().images[idx];
    const auto enc = encode_image(t, model, img, idx);
    std::map<PredicateId, PrototypeBank> live;
    std::map<PredicateId, std::vector<Eigen::VectorXd>> sup;
    for (auto p : ids) {
        const auto& refs = fx.supports.entries.at(p);
        live.emplace(p, build_bank_for(t, model, fx.ds(), p, refs));
        for (const auto& r : refs) {
            const auto pr = pair_of(fx.ds(), r);
            const auto e = encode_image(t, model, fx.ds().images[pr.image], pr.image);
            sup[p].push_back(t.value(embed_pair(t, model, e, pr.subject, pr.object, &live.at(p)).final).col(0));
        }
    }
    std::size_t checked = 0;
    for (const auto& p : out) {
        std::vector<double> logits;
        double mine = 0;
        for (auto q : ids) {
            const Eigen::VectorXd F = t.value(embed_pair(t, model, enc, p.subject, p.object, &live.at(q)).final).col(0);
            double d = 0;
            for (const auto& s : sup[q]) d += (F - s).squaredNorm();
            d /= static_cast<double>(sup[q].size());
            logits.push_back(-d);
            if (q == p.predicate) mine = -d;
        }
        logits.push_back(-model.background->value(0, 0));
        double z = 0;
        for (double l : logits) z += std::exp(l);
        CHECK(p.score == doctest::Approx(std::exp(mine) / z).epsilon(1e-9));
        ++checked;
    }
    CHECK(checked == out.size());
}

TEST_CASE("equal distances give uniform scores including background") {
    EvalFixture fx;
    Model model(fx.cfg, 3);
    model.aggregator.mlp().w2().value.setZero();
    model.background->value(0, 0) = 0.0;
    const EvalBanks banks(model, fx.ds(), fx.supports);
    const auto ids = banks.predicates();
    const auto out = score_image(model, fx.ds(), fx.test_image_with(3), banks, ids, model.label_embedder(), Task::PredCls);
    REQUIRE(!out.empty());
    for (const auto& p : out) CHECK(p.score == doctest::Approx(1.0 / (ids.size() + 1)));
}

TEST_CASE("a distance gap of 100 gives a score above 0.99") {
    EvalFixture fx;
    auto cfg = fx.cfg;
    cfg.metric = MetricMode::Average;
    Model model(cfg, 4);
    // only the background competes, at a distance of 100 beyond every predicate
    model.aggregator.mlp().w2().value.setZero();
    model.background->value(0, 0) = 100.0;
    SupportIndex one;
    one.shots = fx.supports.shots;
    one.entries.emplace(*fx.supports.entries.begin());
    const EvalBanks banks(model, fx.ds(), one);
    const auto ids = banks.predicates();
    const auto out = score_image(model, fx.ds(), fx.test_image_with(3), banks, ids, model.label_embedder(), Task::PredCls);
    REQUIRE(!out.empty());
    for (const auto& p : out) CHECK(p.score > 0.99);
}

TEST_CASE("missing bank is a protocol error") {
    EvalFixture fx;
    Model model(fx.cfg, 5);
    SupportIndex partial;
    partial.entries.emplace(*fx.supports.entries.begin());
    const EvalBanks banks(model, fx.ds(), partial);
    const std::vector<PredicateId> all = fx.split.all_predicates();
    CHECK_THROWS_AS(score_image(model, fx.ds(), fx.test_image_with(2), banks, all, model.label_embedder(), Task::PredCls),
                    ProtocolError);
    CHECK_THROWS_AS(banks.at(PredicateId{99}), ProtocolError);
}

TEST_CASE("SGCls uses the object head's labels") {
    EvalFixture fx;
    Model model(fx.cfg, 6);
    model.object_head_w->value.setZero();
    model.object_head_b->value.setZero();
    model.object_head_b->value(3, 0) = 5.0;
    const EvalBanks banks(model, fx.ds(), fx.supports);
    const auto ids = banks.predicates();
    const int idx = fx.test_image_with(3);
    for (const auto& p : score_image(model, fx.ds(), idx, banks, ids, model.label_embedder(), Task::SGCls)) {
        CHECK(p.subject_label == CategoryId{3});
        CHECK(p.object_label == CategoryId{3});
    }
    const auto& img = fx.ds().images[idx];
    for (const auto& p : score_image(model, fx.ds(), idx, banks, ids, model.label_embedder(), Task::PredCls))
        CHECK(p.subject_label == img.objects[p.subject].category);
}

TEST_CASE("recall examples") {
    const std::vector<int> ks{20, 50, 100};
    const std::vector<PredicateId> split{PredicateId{0}, PredicateId{1}};
    SUBCASE("perfect single prediction") {
        const std::vector<TripletPrediction> p{pred(0, 0, 1, 2, 3, 0, 0.9, 0)};
        const std::vector<GroundTruthTriplet> g{truth(0, 0, 1, 2, 3, 0)};
        const auto r = mean_recall(p, g, ks, split);
        CHECK(r.per_predicate.at(PredicateId{0}).at(20) == 1.0);
        CHECK(r.mean_recall.at(20) == 1.0);
        CHECK(r.evaluated_categories == 1);
    }
    SUBCASE("correct pair, wrong predicate") {
        const std::vector<TripletPrediction> p{pred(0, 0, 1, 2, 3, 1, 0.9, 0), pred(0, 0, 1, 2, 3, 0, 0.1, 0)};
        const std::vector<GroundTruthTriplet> g{truth(0, 0, 1, 2, 3, 0)};
        CHECK(mean_recall(p, g, ks, split).per_predicate.at(PredicateId{0}).at(100) == 0.0);
    }
    SUBCASE("wrong subject label in SGCls") {
        const std::vector<TripletPrediction> p{pred(0, 0, 1, 1, 3, 0, 0.9, 0)};
        const std::vector<GroundTruthTriplet> g{truth(0, 0, 1, 2, 3, 0)};
        CHECK(mean_recall(p, g, ks, split).mean_recall.at(100) == 0.0);
    }
    SUBCASE("split without ground truth is not available") {
        const std::vector<TripletPrediction> p{pred(0, 0, 1, 2, 3, 0, 0.9, 0)};
        const std::vector<GroundTruthTriplet> g{truth(0, 0, 1, 2, 3, 4)};
        const auto r = mean_recall(p, g, ks, split);
        CHECK(!r.available);
        CHECK(r.mean_recall.empty());
    }
    SUBCASE("non-positive cutoff") {
        const std::vector<int> bad{0};
        CHECK_THROWS_AS(mean_recall({}, {}, bad, split), ConfigError);
    }
    SUBCASE("cutoff counts per image") {
        // two images, one gt each at rank 1 of its own image
        const std::vector<TripletPrediction> p{pred(0, 0, 1, 0, 0, 0, 0.9, 0), pred(0, 1, 0, 0, 0, 0, 0.8, 1),
                                               pred(1, 1, 0, 0, 0, 0, 0.9, 1), pred(1, 0, 1, 0, 0, 0, 0.8, 0)};
        const std::vector<GroundTruthTriplet> g{truth(0, 1, 0, 0, 0, 0), truth(1, 0, 1, 0, 0, 0)};
        const std::vector<int> k12{1, 2};
        const auto r = mean_recall(p, g, k12, split);
        CHECK(r.mean_recall.at(1) == 0.0);
        CHECK(r.mean_recall.at(2) == 1.0);
    }
}

TEST_CASE("graph constraint keeps one predicate per pair, ties to the lower id") {
    const std::vector<TripletPrediction> p{pred(0, 0, 1, 0, 0, 2, 0.5, 0), pred(0, 0, 1, 0, 0, 1, 0.5, 0),
                                           pred(0, 0, 1, 0, 0, 0, 0.2, 0), pred(0, 1, 0, 0, 0, 0, 0.3, 1)};
    const auto kept = apply_graph_constraint(p);
    CHECK(kept.size() == 2);
    std::set<std::pair<int, int>> pairs;
    for (const auto& k : kept) {
        CHECK(pairs.insert({k.subject, k.object}).second);
        if (k.subject == 0) CHECK(k.predicate == PredicateId{1});
    }
}

TEST_CASE("ranking order: score, then predicate id, then pair index") {
    std::vector<TripletPrediction> p{pred(0, 0, 1, 0, 0, 1, 0.5, 3), pred(0, 0, 2, 0, 0, 1, 0.5, 1),
                                     pred(0, 1, 0, 0, 0, 0, 0.5, 2), pred(0, 2, 0, 0, 0, 3, 0.7, 4)};
    rank_predictions(p);
    CHECK(p[0].pair_index == 4);
    CHECK(p[1].pair_index == 2);
    CHECK(p[2].pair_index == 1);
    CHECK(p[3].pair_index == 3);
}

TEST_CASE("mean recall agrees with a brute-force oracle on random toy corpora") {
    std::mt19937_64 rng(2024);
    const std::vector<int> ks{1, 2, 3, 5, 20};
    for (int trial = 0; trial < 100; ++trial) {
        const auto c = testing::random_toy_corpus(rng);
        for (const auto* split : {&c.base, &c.novel}) {
            const auto r = mean_recall(c.preds, c.gt, ks, *split);
            double prev = -1;
            for (int k : ks) {
                const auto o = testing::brute_force_recall(c.preds, c.gt, k, *split);
                CHECK(r.available == o.mean.has_value());
                if (!o.mean) continue;
                CHECK(r.mean_recall.at(k) == *o.mean);
                for (const auto& [p, v] : o.per_predicate) CHECK(r.per_predicate.at(PredicateId{p}).at(k) == v);
                CHECK(r.mean_recall.at(k) >= prev);
                prev = r.mean_recall.at(k);
                CHECK(r.mean_recall.at(k) >= 0.0);
                CHECK(r.mean_recall.at(k) <= 1.0);
            }
        }
    }
}

TEST_CASE("random scores land at the analytic chance level") {
    // 10 predicates, uniform random scores: under the graph constraint each pair
    // keeps a uniformly random predicate, and the kept pair survives the cutoff
    // with probability min(1, K / pairs).
    auto wc = testing::small_world(400);
    wc.num_predicates = 10;
    wc.num_categories = 10;
    wc.num_groups = 5;
    wc.distractors_per_image = 4;
    const auto w = generate_synthetic_world(wc, 5);
    const auto& ds = w.dataset;
    std::vector<PredicateId> all;
    for (int p = 0; p < 10; ++p) all.emplace_back(p);
    const auto gt = collect_ground_truth(ds, all, SupportIndex{});
    const int K = 20;
    const int R = 10;

    std::map<int, double> expect_sum;
    std::map<int, int> count;
    for (const auto& g : gt) {
        const double n = static_cast<double>(ds.images[g.image].objects.size());
        const double pairs = n * (n - 1);
        expect_sum[g.predicate.value] += (1.0 / R) * std::min(1.0, K / pairs);
        ++count[g.predicate.value];
    }
    double chance = 0;
    for (const auto& [p, s] : expect_sum) chance += s / count[p];
    chance /= static_cast<double>(expect_sum.size());

    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0, 1);
    double observed = 0;
    const int draws = 20;
    const std::vector<int> ks{K};
    for (int d = 0; d < draws; ++d) {
        std::vector<TripletPrediction> preds;
        for (std::size_t i = 0; i < ds.images.size(); ++i) {
            const auto& img = ds.images[i];
            if (img.split != ImageSplit::Test) continue;
            const int n = static_cast<int>(img.objects.size());
            for (int s = 0; s < n; ++s)
                for (int o = 0; o < n; ++o)
                    if (s != o)
                        for (int p = 0; p < R; ++p)
                            preds.push_back({static_cast<int>(i), s, o, img.objects[s].category, img.objects[o].category,
                                             PredicateId{p}, u(rng), pair_slot(n, s, o)});
        }
        observed += mean_recall(preds, gt, ks, all).mean_recall.at(K);
    }
    observed /= draws;
    MESSAGE("chance " << chance << " observed " << observed);
    CHECK(std::abs(observed - chance) < 0.02);
}

TEST_CASE("evaluate: hygiene, exclusions and determinism") {
    EvalFixture fx;
    Model model(fx.cfg, 7);
    std::vector<TripletPrediction> preds;
    EvaluateOptions opt;
    opt.workers = 3;
    opt.predictions_out = &preds;
    const auto r = evaluate(fx.ds(), fx.split, fx.supports, model, Task::PredCls, opt);
    for (const auto& [p, _] : r.base.per_predicate) CHECK(fx.split.is_base(p));
    for (const auto& [p, _] : r.novel.per_predicate) CHECK(fx.split.is_novel(p));
    for (const auto& [p, rec] : r.novel.per_predicate) {
        CHECK(rec.at(20) <= rec.at(50));
        CHECK(rec.at(50) <= rec.at(100));
    }
    // support triplets never count as ground truth
    const auto gt = collect_ground_truth(fx.ds(), r.evaluated, fx.supports);
    for (const auto& [pred_id, refs] : fx.supports.entries)
        for (const auto& ref : refs) {
            const auto pp = pair_of(fx.ds(), ref);
            for (const auto& g : gt)
                CHECK(!(g.image == pp.image && g.subject == pp.subject && g.object == pp.object && g.predicate == pred_id));
        }
    for (const auto& p : preds) {
        CHECK(fx.ds().images[p.image].split == ImageSplit::Test);
        CHECK(p.score > 0.0);
        CHECK(p.score < 1.0);
    }

    EvaluateOptions single;
    single.workers = 1;
    const auto again = evaluate(fx.ds(), fx.split, fx.supports, model, Task::PredCls, single);
    CHECK(eval_report_to_json(fx.ds(), r).dump() == eval_report_to_json(fx.ds(), again).dump());

    SupportIndex partial = fx.supports;
    const auto dropped = partial.entries.begin()->first;
    partial.entries.erase(partial.entries.begin());
    const auto pr = evaluate(fx.ds(), fx.split, partial, model, Task::PredCls, single);
    CHECK(std::find(pr.excluded.begin(), pr.excluded.end(), dropped) != pr.excluded.end());
    CHECK(std::find(pr.evaluated.begin(), pr.evaluated.end(), dropped) == pr.evaluated.end());

    // supports of a predicate the split does not contain
    const auto narrow = make_split(fx.ds(), 3, 2, 0);
    CHECK_THROWS_AS(evaluate(fx.ds(), narrow, fx.supports, model, Task::PredCls, single), ProtocolError);
}

TEST_CASE("report json layout") {
    EvalFixture fx;
    Model model(fx.cfg, 8);
    EvaluateOptions single;
    single.workers = 1;
    const auto j = eval_report_to_json(fx.ds(), evaluate(fx.ds(), fx.split, fx.supports, model, Task::SGCls, single));
    CHECK(j["task"] == "SGCls");
    CHECK(j["K"] == 2);
    CHECK(j["graph_constraint"] == true);
    for (const char* s : {"base", "novel"})
        for (const char* k : {"mR@20", "mR@50", "mR@100"}) CHECK(j[s].contains(k));

    EvalReport empty;
    empty.k_list = {20};
    const auto e = eval_report_to_json(fx.ds(), empty);
    CHECK(e["novel"]["mR@20"].is_null());
    CHECK(e["novel"]["available"] == false);
}

TEST_CASE("worker count from the environment") {
    setenv("FSREL_NUM_WORKERS", "3", 1);
    CHECK(eval_worker_count() == 3);
    setenv("FSREL_NUM_WORKERS", "zero", 1);
    CHECK_THROWS_AS(eval_worker_count(), ConfigError);
    unsetenv("FSREL_NUM_WORKERS");
    CHECK(eval_worker_count() >= 1);
}
