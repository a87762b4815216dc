#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "helpers.hpp"

#include "fsrel/errors.hpp"
#include "fsrel/sgdata.hpp"
#include "fsrel/synthetic.hpp"

using namespace fsrel;
using nlohmann::json;

namespace {

json minimal_doc() {
    return json::parse(R"({
      "categories": ["boy", "food"],
      "predicates": ["has"],
      "images": [{"id": "a", "objects": [
          {"id": 1, "category": "boy", "bbox": [0.1, 0.1, 0.4, 0.5], "appearance": [1, 2]},
          {"id": 2, "category": "food", "bbox": [0.5, 0.5, 0.7, 0.9], "appearance": [3, 4]}],
        "relations": [{"subject": 1, "predicate": "has", "object": 2}]}]
    })");
}

// Dataset whose predicate i has counts[i] annotations, one image per annotation.
SceneGraphDataset counted_dataset(const std::vector<int>& counts) {
    json doc;
    doc["categories"] = {"a", "b"};
    doc["predicates"] = json::array();
    for (std::size_t p = 0; p < counts.size(); ++p) doc["predicates"].push_back("p" + std::to_string(p));
    doc["images"] = json::array();
    int n = 0;
    for (std::size_t p = 0; p < counts.size(); ++p)
        for (int k = 0; k < counts[p]; ++k) {
            json img;
            img["id"] = "i" + std::to_string(n++);
            img["split"] = k % 2 == 0 ? "test" : "train";
            img["objects"] = json::array({{{"id", 0}, {"category", "a"}, {"bbox", {0.1, 0.1, 0.3, 0.3}}, {"appearance", {0.0}}},
                                          {{"id", 1}, {"category", "b"}, {"bbox", {0.5, 0.5, 0.9, 0.9}}, {"appearance", {1.0}}},
                                          {{"id", 2}, {"category", "b"}, {"bbox", {0.2, 0.6, 0.4, 0.8}}, {"appearance", {2.0}}}});
            img["relations"] = json::array({{{"subject", 0}, {"predicate", "p" + std::to_string(p)}, {"object", 1}}});
            doc["images"].push_back(img);
        }
    return parse_dataset(doc);
}

std::filesystem::path temp_file(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "fsrel_unit";
    std::filesystem::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("minimal dataset file loads one image") {
    const auto path = temp_file("minimal.json");
    std::ofstream(path) << minimal_doc().dump();
    const auto ds = load_dataset(path);
    CHECK(ds.images.size() == 1);
    CHECK(ds.images[0].objects.size() == 2);
    CHECK(ds.images[0].relations.size() == 1);
    CHECK(ds.appearance_dim == 2);
    CHECK(ds.images[0].split == ImageSplit::Train);
}

TEST_CASE("dangling object reference is an integrity error") {
    auto doc = minimal_doc();
    doc["images"][0]["relations"][0]["object"] = 99;
    CHECK_THROWS_AS(parse_dataset(doc), IntegrityError);
}

TEST_CASE("schema violations name the offending record") {
    auto doc = minimal_doc();
    doc["images"][0]["objects"][1]["bbox"] = "oops";
    try {
        parse_dataset(doc);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("objects[1]") != std::string::npos);
    }
    auto missing = minimal_doc();
    missing["images"][0].erase("objects");
    CHECK_THROWS_AS(parse_dataset(missing), ParseError);
}

TEST_CASE("invariant violations are rejected") {
    SUBCASE("inverted box") {
        auto doc = minimal_doc();
        doc["images"][0]["objects"][0]["bbox"] = {0.5, 0.1, 0.4, 0.5};
        CHECK_THROWS_AS(parse_dataset(doc), IntegrityError);
    }
    SUBCASE("self relation") {
        auto doc = minimal_doc();
        doc["images"][0]["relations"][0]["object"] = 1;
        CHECK_THROWS_AS(parse_dataset(doc), IntegrityError);
    }
    SUBCASE("duplicate triplet") {
        auto doc = minimal_doc();
        doc["images"][0]["relations"].push_back(doc["images"][0]["relations"][0]);
        CHECK_THROWS_AS(parse_dataset(doc), IntegrityError);
    }
    SUBCASE("duplicate object id") {
        auto doc = minimal_doc();
        doc["images"][0]["objects"][1]["id"] = 1;
        CHECK_THROWS_AS(parse_dataset(doc), IntegrityError);
    }
    SUBCASE("appearance length mismatch") {
        auto doc = minimal_doc();
        doc["images"][0]["objects"][1]["appearance"] = {1.0};
        CHECK_THROWS_AS(parse_dataset(doc), IntegrityError);
    }
    SUBCASE("unknown category") {
        auto doc = minimal_doc();
        doc["images"][0]["objects"][1]["category"] = "chair";
        CHECK_THROWS_AS(parse_dataset(doc), IntegrityError);
    }
}

TEST_CASE("featurizer synthesizes deterministic appearance") {
    auto doc = minimal_doc();
    for (auto& o : doc["images"][0]["objects"]) o.erase("appearance");
    CHECK_THROWS_AS(parse_dataset(doc), ParseError);
    doc["featurizer"] = {{"dim", 5}, {"seed", 11}, {"noise", 0.1}};
    const auto a = parse_dataset(doc);
    const auto b = parse_dataset(doc);
    CHECK(a.appearance_dim == 5);
    CHECK(a.images[0].objects[0].appearance.size() == 5);
    CHECK(a.images[0].objects[0].appearance == b.images[0].objects[0].appearance);
    CHECK(a.images[0].objects[0].appearance != a.images[0].objects[1].appearance);
    doc["featurizer"]["seed"] = 12;
    CHECK(parse_dataset(doc).images[0].objects[0].appearance != a.images[0].objects[0].appearance);
}

TEST_CASE("synthetic world round-trips through the file format") {
    const auto world = generate_synthetic_world(testing::small_world(), 5);
    const auto path = temp_file("world.json");
    save_dataset(world.dataset, path);
    const auto back = load_dataset(path);
    CHECK(back == world.dataset);
    CHECK(dataset_to_json(back).dump() == dataset_to_json(world.dataset).dump());
}

TEST_CASE("make_split ranks by frequency") {
    const auto ds = counted_dataset({3, 5, 1});
    const auto split = make_split(ds, 2, 1, 0);
    CHECK(split.base_predicates == std::vector<PredicateId>{PredicateId{0}, PredicateId{1}});
    CHECK(split.novel_predicates == std::vector<PredicateId>{PredicateId{2}});
    CHECK(split.object_categories.size() == 2);
}

TEST_CASE("make_split breaks frequency ties by id") {
    const auto ds = counted_dataset({2, 2, 2, 2});
    // Oracle: enumerate (count desc, id asc) by hand.
    std::vector<std::pair<int, int>> order;
    const auto freq = ds.predicate_frequencies();
    for (int p = 0; p < 4; ++p) order.emplace_back(-freq[p], p);
    std::sort(order.begin(), order.end());
    const auto split = make_split(ds, 2, 2, 99);
    CHECK(split.base_predicates == std::vector<PredicateId>{PredicateId{order[0].second}, PredicateId{order[1].second}});
    CHECK(split.base_predicates == std::vector<PredicateId>{PredicateId{0}, PredicateId{1}});
}

TEST_CASE("make_split is deterministic and validates sizes") {
    const auto world = generate_synthetic_world(testing::small_world(), 3);
    const auto a = make_split(world.dataset, 4, 2, 1);
    const auto b = make_split(world.dataset, 4, 2, 1);
    CHECK(a.base_predicates == b.base_predicates);
    CHECK(a.novel_predicates == b.novel_predicates);
    std::set<PredicateId> inter;
    std::set_intersection(a.base_predicates.begin(), a.base_predicates.end(), a.novel_predicates.begin(),
                          a.novel_predicates.end(), std::inserter(inter, inter.begin()));
    CHECK(inter.empty());
    CHECK_THROWS_AS(make_split(world.dataset, 5, 2, 1), ConfigError);
}

TEST_CASE("VG-scale split sizes") {
    std::vector<int> counts(150);
    for (int p = 0; p < 150; ++p) counts[p] = 1 + (p % 7);
    const auto ds = counted_dataset(counts);
    const auto split = make_split(ds, 80, 60, 0);
    CHECK(split.base_predicates.size() == 80);
    CHECK(split.novel_predicates.size() == 60);
}

TEST_CASE("support sampling") {
    const auto world = generate_synthetic_world(testing::small_world(120), 8);
    const auto& ds = world.dataset;
    const auto split = make_split(ds, 4, 2, 0);

    SUBCASE("protocol shot counts give exactly K distinct-image entries") {
        for (int k : {1, 5, 10}) {
            const auto index = sample_support_sets(ds, split, k, 3);
            CHECK(index.shots == k);
            for (const auto& [pred, refs] : index.entries) {
                CHECK(static_cast<int>(refs.size()) == k);
                std::set<int> images;
                for (const auto& r : refs) {
                    images.insert(r.image);
                    CHECK(ds.images[r.image].split == ImageSplit::Test);
                    CHECK(ds.images[r.image].relations[r.triplet].predicate == pred);
                }
                CHECK(static_cast<int>(images.size()) == k);
            }
            // coverage: every predicate with >= K test images appears
            for (auto p : split.all_predicates()) {
                std::set<int> imgs;
                for (std::size_t i = 0; i < ds.images.size(); ++i)
                    if (ds.images[i].split == ImageSplit::Test)
                        for (const auto& r : ds.images[i].relations)
                            if (r.predicate == p) imgs.insert(static_cast<int>(i));
                CHECK((static_cast<int>(imgs.size()) >= k) == (index.entries.count(p) == 1));
            }
        }
    }
    SUBCASE("same seed gives identical index") {
        CHECK(sample_support_sets(ds, split, 5, 9) == sample_support_sets(ds, split, 5, 9));
    }
    SUBCASE("json round trip") {
        const auto index = sample_support_sets(ds, split, 2, 9);
        CHECK(support_from_json(ds, support_to_json(ds, index)) == index);
    }
    SUBCASE("uncoverable predicate is skipped with a warning") {
        const auto index = sample_support_sets(ds, split, 1000, 1);
        CHECK(index.entries.empty());
        CHECK(index.warnings.size() == split.all_predicates().size());
    }
    SUBCASE("invalid shot count") { CHECK_THROWS_AS(sample_support_sets(ds, split, 0, 1), ConfigError); }
}

TEST_CASE("K=1 on a predicate with a single triplet picks it") {
    const auto ds = counted_dataset({4, 2});  // p1 has exactly one test image (k % 2 == 0)
    const auto split = make_split(ds, 1, 1, 0);
    const auto index = sample_support_sets(ds, split, 1, 17);
    const auto& refs = index.entries.at(PredicateId{1});
    REQUIRE(refs.size() == 1);
    CHECK(ds.images[refs[0].image].id == "i4");
    CHECK(refs[0].triplet == 0);
}

TEST_CASE("episodes") {
    const auto world = generate_synthetic_world(testing::small_world(150), 21);
    const auto& ds = world.dataset;
    const auto split = make_split(ds, 4, 2, 0);
    EpisodeConfig cfg;

    SUBCASE("structural properties over many draws") {
        Rng rng(4);
        for (int t = 0; t < 200; ++t) {
            const auto ep = sample_episode(ds, split, cfg, rng);
            CHECK_NOTHROW(assert_base_only(ep, split));
            CHECK(static_cast<int>(ep.categories.size()) <= cfg.categories_per_batch);
            std::set<TripletRef> sup;
            for (auto p : ep.categories) {
                REQUIRE(ep.supports.count(p));
                CHECK(!ep.supports.at(p).empty());
                for (const auto& r : ep.supports.at(p)) {
                    sup.insert(r);
                    CHECK(ds.images[r.image].split == ImageSplit::Train);
                }
            }
            int fg = 0, bg = 0;
            for (const auto& q : ep.queries) {
                if (q.label) {
                    ++fg;
                    CHECK(!sup.count(q.source));
                    CHECK(std::find(ep.categories.begin(), ep.categories.end(), *q.label) != ep.categories.end());
                } else {
                    ++bg;
                    CHECK(!pair_has_relation(ds.images[q.pair.image], q.pair.subject, q.pair.object));
                }
            }
            CHECK(bg == 2 * fg);
        }
    }
    SUBCASE("fixed rng state replays identically") {
        Rng a(77), b(77);
        const auto e1 = sample_episode(ds, split, cfg, a);
        const auto e2 = sample_episode(ds, split, cfg, b);
        CHECK(episode_to_json(ds, e1).dump() == episode_to_json(ds, e2).dump());
    }
    SUBCASE("novel predicate in an episode trips the boundary check") {
        Rng rng(1);
        auto ep = sample_episode(ds, split, cfg, rng);
        ep.categories.push_back(split.novel_predicates.front());
        CHECK_THROWS_AS(assert_base_only(ep, split), ContractViolation);
    }
}

TEST_CASE("category with three positives and one support") {
    // One base predicate with exactly 3 training positives.
    json doc;
    doc["categories"] = {"a", "b"};
    doc["predicates"] = {"p0", "p1"};
    doc["images"] = json::array();
    for (int i = 0; i < 4; ++i) {
        json img;
        img["id"] = "i" + std::to_string(i);
        img["split"] = i < 3 ? "train" : "test";
        img["objects"] = json::array({{{"id", 0}, {"category", "a"}, {"bbox", {0.1, 0.1, 0.3, 0.3}}, {"appearance", {0.0}}},
                                      {{"id", 1}, {"category", "b"}, {"bbox", {0.5, 0.5, 0.9, 0.9}}, {"appearance", {1.0}}},
                                      {{"id", 2}, {"category", "b"}, {"bbox", {0.2, 0.6, 0.4, 0.8}}, {"appearance", {2.0}}}});
        img["relations"] = json::array({{{"subject", 0}, {"predicate", i < 3 ? "p0" : "p1"}, {"object", 1}}});
        doc["images"].push_back(img);
    }
    const auto ds = parse_dataset(doc);
    const auto split = make_split(ds, 1, 1, 0);
    EpisodeConfig cfg;
    cfg.categories_per_batch = 1;
    cfg.support_min = cfg.support_max = 1;
    Rng rng(3);
    const auto ep = sample_episode(ds, split, cfg, rng);
    CHECK(ep.supports.at(PredicateId{0}).size() == 1);
    CHECK(ep.foreground_count() == 2);
    CHECK(ep.background_count() == 4);
}

TEST_CASE("sampling error when no base predicate has two positives") {
    const auto ds = counted_dataset({1, 1});  // one train positive would need k%2==1: none
    const auto split = make_split(ds, 1, 1, 0);
    Rng rng(1);
    CHECK_THROWS_AS(sample_episode(ds, split, EpisodeConfig{}, rng), SamplingError);
}

TEST_CASE("synthetic world generation") {
    SUBCASE("same config and seed serialize identically") {
        const auto a = generate_synthetic_world(testing::small_world(), 42);
        const auto b = generate_synthetic_world(testing::small_world(), 42);
        CHECK(dataset_to_json(a.dataset).dump() == dataset_to_json(b.dataset).dump());
        CHECK(dataset_to_json(a.dataset).dump() != dataset_to_json(generate_synthetic_world(testing::small_world(), 43).dataset).dump());
    }
    SUBCASE("single mode with zero noise shares pool structure") {
        auto cfg = testing::small_world();
        cfg.appearance_noise = 0.0;
        cfg.default_modes = 1;
        const auto w = generate_synthetic_world(cfg, 2);
        for (int p = 0; p < cfg.num_predicates; ++p) {
            const auto& mode = w.metadata.modes[p].at(0);
            for (const auto& img : w.dataset.images)
                for (const auto& r : img.relations) {
                    if (r.predicate.value != p) continue;
                    const int s = img.objects[img.object_index(r.subject_id)].category.value;
                    const int o = img.objects[img.object_index(r.object_id)].category.value;
                    CHECK(std::count(mode.subject_pool.begin(), mode.subject_pool.end(), s) == 1);
                    CHECK(std::count(mode.object_pool.begin(), mode.object_pool.end(), o) == 1);
                }
        }
        // zero noise: same category means the same appearance vector
        std::map<int, std::vector<double>> seen;
        for (const auto& img : w.dataset.images)
            for (const auto& o : img.objects) {
                auto [it, fresh] = seen.emplace(o.category.value, o.appearance);
                if (!fresh) CHECK(it->second == o.appearance);
            }
    }
    SUBCASE("invalid configs") {
        auto cfg = testing::small_world();
        cfg.default_modes = 0;
        CHECK_THROWS_AS(generate_synthetic_world(cfg, 1), ConfigError);
        cfg = testing::small_world();
        cfg.pool_size = 0;
        CHECK_THROWS_AS(generate_synthetic_world(cfg, 1), ConfigError);
        cfg = testing::small_world();
        cfg.explicit_modes.assign(cfg.num_predicates, {PredicateMode{}});
        CHECK_THROWS_AS(generate_synthetic_world(cfg, 1), ConfigError);
    }
    SUBCASE("world config json round trip and unknown keys") {
        auto cfg = testing::small_world();
        cfg.modes_per_predicate = {1, 2, 1, 2, 1, 2};
        const auto j = world_config_to_json(cfg);
        CHECK(world_config_to_json(world_config_from_json(j)) == j);
        auto bad = j;
        bad["bogus"] = 1;
        CHECK_THROWS_AS(world_config_from_json(bad), ConfigError);
    }
    SUBCASE("frequency ranking follows the predicate index") {
        const auto w = generate_synthetic_world(testing::small_world(200), 6);
        const auto freq = w.dataset.predicate_frequencies();
        for (std::size_t p = 1; p < freq.size(); ++p) CHECK(freq[p - 1] >= freq[p]);
    }
}

namespace {

// Lloyd's 2-means with farthest-point init; returns cluster ids.
std::vector<int> two_means(const std::vector<Eigen::VectorXd>& x) {
    Eigen::VectorXd c0 = x[0], c1 = x[0];
    double far = -1;
    for (const auto& v : x)
        if ((v - c0).squaredNorm() > far) {
            far = (v - c0).squaredNorm();
            c1 = v;
        }
    std::vector<int> assign(x.size(), 0);
    for (int it = 0; it < 100; ++it) {
        bool changed = false;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const int a = (x[i] - c0).squaredNorm() <= (x[i] - c1).squaredNorm() ? 0 : 1;
            changed |= a != assign[i];
            assign[i] = a;
        }
        Eigen::VectorXd s0 = Eigen::VectorXd::Zero(x[0].size()), s1 = s0;
        int n0 = 0, n1 = 0;
        for (std::size_t i = 0; i < x.size(); ++i) (assign[i] ? (++n1, s1 += x[i]) : (++n0, s0 += x[i]));
        if (n0) c0 = s0 / n0;
        if (n1) c1 = s1 / n1;
        if (!changed && it > 0) break;
    }
    return assign;
}

}  // namespace

TEST_CASE("two-means on pair appearance recovers the modes of a polysemous predicate") {
    auto cfg = testing::small_world(300);
    cfg.modes_per_predicate.assign(cfg.num_predicates, 2);
    cfg.mode_separation = 8.0;
    const auto w = generate_synthetic_world(cfg, 13);
    for (int p = 0; p < cfg.num_predicates; ++p) {
        std::vector<Eigen::VectorXd> feats;
        std::vector<int> modes;
        for (std::size_t i = 0; i < w.dataset.images.size(); ++i) {
            const auto& img = w.dataset.images[i];
            for (std::size_t r = 0; r < img.relations.size(); ++r) {
                const auto& rel = img.relations[r];
                if (rel.predicate.value != p) continue;
                const auto& s = img.objects[img.object_index(rel.subject_id)].appearance;
                const auto& o = img.objects[img.object_index(rel.object_id)].appearance;
                Eigen::VectorXd v(s.size() + o.size());
                for (std::size_t k = 0; k < s.size(); ++k) v[static_cast<Eigen::Index>(k)] = s[k];
                for (std::size_t k = 0; k < o.size(); ++k) v[static_cast<Eigen::Index>(s.size() + k)] = o[k];
                feats.push_back(v);
                modes.push_back(w.metadata.relation_modes[i][r]);
            }
        }
        REQUIRE(feats.size() >= 4);
        const auto assign = two_means(feats);
        int agree = 0;
        for (std::size_t i = 0; i < assign.size(); ++i) agree += assign[i] == modes[i];
        const double acc = std::max(agree, static_cast<int>(assign.size()) - agree) / static_cast<double>(assign.size());
        CHECK(acc > 0.95);
    }
}
