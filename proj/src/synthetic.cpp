#include "fsrel/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>

#include "fsrel/errors.hpp"
#include "fsrel/sgdata.hpp"

namespace fsrel {

using nlohmann::json;

namespace {

std::string padded(const char* prefix, int i, int width) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s%0*d", prefix, width, i);
    return buf;
}

json mode_to_json(const PredicateMode& m) {
    return {{"subjects", m.subject_pool}, {"objects", m.object_pool},
            {"dx", m.dx}, {"dy", m.dy}, {"size_ratio", m.size_ratio}};
}

PredicateMode mode_from_json(const json& j) {
    PredicateMode m;
    m.subject_pool = j.at("subjects").get<std::vector<int>>();
    m.object_pool = j.at("objects").get<std::vector<int>>();
    m.dx = j.value("dx", 0.0);
    m.dy = j.value("dy", 0.0);
    m.size_ratio = j.value("size_ratio", 1.0);
    return m;
}

void check_config(const WorldConfig& cfg) {
    if (cfg.num_categories < 2) throw ConfigError("world: need at least 2 object categories");
    if (cfg.num_groups < 1 || cfg.num_groups > cfg.num_categories)
        throw ConfigError("world: num_groups must be in [1, num_categories]");
    if (cfg.num_predicates < 1) throw ConfigError("world: need at least 1 predicate");
    if (!cfg.modes_per_predicate.empty() &&
        static_cast<int>(cfg.modes_per_predicate.size()) != cfg.num_predicates)
        throw ConfigError("world: modes_per_predicate must list one count per predicate");
    if (cfg.default_modes < 1) throw ConfigError("world: mode count M must be >= 1");
    for (int m : cfg.modes_per_predicate)
        if (m < 1) throw ConfigError("world: mode count M must be >= 1");
    if (cfg.pool_size < 1) throw ConfigError("world: pool_size must be >= 1");
    if (!cfg.explicit_modes.empty()) {
        if (static_cast<int>(cfg.explicit_modes.size()) != cfg.num_predicates)
            throw ConfigError("world: explicit_modes must list modes for every predicate");
        for (const auto& modes : cfg.explicit_modes) {
            if (modes.empty()) throw ConfigError("world: mode count M must be >= 1");
            for (const auto& m : modes) {
                if (m.subject_pool.empty() || m.object_pool.empty()) throw ConfigError("world: empty category pool");
                for (int c : m.subject_pool)
                    if (c < 0 || c >= cfg.num_categories) throw ConfigError("world: pool category out of range");
                for (int c : m.object_pool)
                    if (c < 0 || c >= cfg.num_categories) throw ConfigError("world: pool category out of range");
            }
        }
    }
    if (cfg.appearance_dim < 1) throw ConfigError("world: appearance_dim must be positive");
    if (cfg.num_images < 1 || cfg.triplets_per_image < 1 || cfg.distractors_per_image < 0)
        throw ConfigError("world: invalid image counts");
    if (!(cfg.test_fraction >= 0.0 && cfg.test_fraction <= 1.0)) throw ConfigError("world: test_fraction must be in [0,1]");
    if (!(cfg.appearance_noise >= 0.0) || !(cfg.mode_separation >= 0.0) || !(cfg.geometry_jitter >= 0.0))
        throw ConfigError("world: noise and separation must be non-negative");
}

Box place_box(double cx, double cy, double w, double h) {
    w = std::clamp(w, 0.02, 0.9);
    h = std::clamp(h, 0.02, 0.9);
    cx = std::clamp(cx, w / 2, 1.0 - w / 2);
    cy = std::clamp(cy, h / 2, 1.0 - h / 2);
    Box b{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
    b.x1 = std::max(0.0, b.x1);
    b.y1 = std::max(0.0, b.y1);
    b.x2 = std::min(1.0, b.x2);
    b.y2 = std::min(1.0, b.y2);
    return b;
}

}  // namespace

json world_config_to_json(const WorldConfig& c) {
    json j = {{"num_categories", c.num_categories},
              {"num_groups", c.num_groups},
              {"num_predicates", c.num_predicates},
              {"modes_per_predicate", c.modes_per_predicate},
              {"default_modes", c.default_modes},
              {"pool_size", c.pool_size},
              {"mode_separation", c.mode_separation},
              {"appearance_noise", c.appearance_noise},
              {"geometry_jitter", c.geometry_jitter},
              {"appearance_dim", c.appearance_dim},
              {"num_images", c.num_images},
              {"triplets_per_image", c.triplets_per_image},
              {"distractors_per_image", c.distractors_per_image},
              {"test_fraction", c.test_fraction},
              {"frequency_decay", c.frequency_decay}};
    if (!c.explicit_modes.empty()) {
        json modes = json::array();
        for (const auto& per : c.explicit_modes) {
            json arr = json::array();
            for (const auto& m : per) arr.push_back(mode_to_json(m));
            modes.push_back(std::move(arr));
        }
        j["explicit_modes"] = std::move(modes);
    }
    return j;
}

WorldConfig world_config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("world: expected an object");
    WorldConfig c;
    static const std::set<std::string> known = {
        "num_categories", "num_groups", "num_predicates", "modes_per_predicate", "default_modes", "pool_size",
        "mode_separation", "appearance_noise", "geometry_jitter", "appearance_dim", "num_images",
        "triplets_per_image", "distractors_per_image", "test_fraction", "frequency_decay", "explicit_modes"};
    for (const auto& [k, _] : j.items())
        if (!known.count(k)) throw ConfigError("world: unknown key '" + k + "'");
    try {
        c.num_categories = j.value("num_categories", c.num_categories);
        c.num_groups = j.value("num_groups", c.num_groups);
        c.num_predicates = j.value("num_predicates", c.num_predicates);
        c.modes_per_predicate = j.value("modes_per_predicate", c.modes_per_predicate);
        c.default_modes = j.value("default_modes", c.default_modes);
        c.pool_size = j.value("pool_size", c.pool_size);
        c.mode_separation = j.value("mode_separation", c.mode_separation);
        c.appearance_noise = j.value("appearance_noise", c.appearance_noise);
        c.geometry_jitter = j.value("geometry_jitter", c.geometry_jitter);
        c.appearance_dim = j.value("appearance_dim", c.appearance_dim);
        c.num_images = j.value("num_images", c.num_images);
        c.triplets_per_image = j.value("triplets_per_image", c.triplets_per_image);
        c.distractors_per_image = j.value("distractors_per_image", c.distractors_per_image);
        c.test_fraction = j.value("test_fraction", c.test_fraction);
        c.frequency_decay = j.value("frequency_decay", c.frequency_decay);
        if (j.contains("explicit_modes"))
            for (const auto& per : j.at("explicit_modes")) {
                std::vector<PredicateMode> modes;
                for (const auto& m : per) modes.push_back(mode_from_json(m));
                c.explicit_modes.push_back(std::move(modes));
            }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("world: ") + e.what());
    }
    return c;
}

json world_metadata_to_json(const WorldMetadata& meta) {
    json modes = json::array();
    for (const auto& per : meta.modes) {
        json arr = json::array();
        for (const auto& m : per) arr.push_back(mode_to_json(m));
        modes.push_back(std::move(arr));
    }
    return {{"modes", std::move(modes)}, {"category_group", meta.category_group}, {"relation_modes", meta.relation_modes}};
}

SyntheticWorld generate_synthetic_world(const WorldConfig& cfg, std::uint64_t seed) {
    check_config(cfg);
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    SyntheticWorld world;
    auto& ds = world.dataset;
    auto& meta = world.metadata;
    const int G = cfg.num_groups;
    const int D = cfg.appearance_dim;

    for (int c = 0; c < cfg.num_categories; ++c) ds.categories.push_back(padded("cat_", c, 2));
    for (int p = 0; p < cfg.num_predicates; ++p) ds.predicates.push_back(padded("pred_", p, 2));
    ds.appearance_dim = D;

    std::vector<std::vector<double>> group_center(G, std::vector<double>(D));
    for (auto& g : group_center)
        for (auto& v : g) v = cfg.mode_separation * normal(rng);
    std::vector<std::vector<int>> group_members(G);
    std::vector<std::vector<double>> centroid(cfg.num_categories, std::vector<double>(D));
    for (int c = 0; c < cfg.num_categories; ++c) {
        const int g = c % G;
        meta.category_group.push_back(g);
        group_members[g].push_back(c);
        for (int d = 0; d < D; ++d) centroid[c][d] = group_center[g][d] + normal(rng);
    }

    if (!cfg.explicit_modes.empty()) {
        meta.modes = cfg.explicit_modes;
    } else {
        std::uniform_real_distribution<double> offset(-0.25, 0.25);
        std::uniform_real_distribution<double> log_ratio(-0.5, 0.5);
        for (int p = 0; p < cfg.num_predicates; ++p) {
            const int M = cfg.modes_per_predicate.empty() ? cfg.default_modes : cfg.modes_per_predicate[p];
            std::vector<int> sg(G), og(G);
            std::iota(sg.begin(), sg.end(), 0);
            std::iota(og.begin(), og.end(), 0);
            std::shuffle(sg.begin(), sg.end(), rng);
            std::shuffle(og.begin(), og.end(), rng);
            std::vector<PredicateMode> modes;
            for (int m = 0; m < M; ++m) {
                PredicateMode mode;
                auto draw_pool = [&](int group) {
                    std::vector<int> members = group_members[group];
                    std::shuffle(members.begin(), members.end(), rng);
                    members.resize(std::min<std::size_t>(members.size(), cfg.pool_size));
                    std::sort(members.begin(), members.end());
                    return members;
                };
                mode.subject_pool = draw_pool(sg[m % G]);
                mode.object_pool = draw_pool(og[m % G]);
                mode.dx = offset(rng);
                mode.dy = offset(rng);
                mode.size_ratio = std::exp(log_ratio(rng));
                modes.push_back(std::move(mode));
            }
            meta.modes.push_back(std::move(modes));
        }
    }

    // Exact per-predicate quotas keep the frequency ranking free of sampling noise.
    const int total = cfg.num_images * cfg.triplets_per_image;
    std::vector<double> weight(cfg.num_predicates);
    for (int p = 0; p < cfg.num_predicates; ++p) weight[p] = 1.0 / (1.0 + cfg.frequency_decay * p);
    const double wsum = std::accumulate(weight.begin(), weight.end(), 0.0);
    std::vector<int> quota(cfg.num_predicates);
    int assigned = 0;
    for (int p = 0; p < cfg.num_predicates; ++p) {
        quota[p] = static_cast<int>(std::floor(total * weight[p] / wsum));
        assigned += quota[p];
    }
    for (int p = 0; assigned < total; p = (p + 1) % cfg.num_predicates, ++assigned) ++quota[p];
    std::vector<int> labels;
    for (int p = 0; p < cfg.num_predicates; ++p) labels.insert(labels.end(), quota[p], p);
    std::shuffle(labels.begin(), labels.end(), rng);

    std::vector<int> order(cfg.num_images);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const int n_test = static_cast<int>(std::lround(cfg.test_fraction * cfg.num_images));
    std::vector<bool> is_test(cfg.num_images, false);
    for (int i = 0; i < n_test; ++i) is_test[order[i]] = true;

    auto appearance = [&](int category) {
        std::vector<double> a(D);
        for (int d = 0; d < D; ++d) a[d] = centroid[category][d] + cfg.appearance_noise * normal(rng);
        return a;
    };

    std::uniform_real_distribution<double> side(0.1, 0.25);
    std::uniform_real_distribution<double> center(0.15, 0.85);
    std::uniform_real_distribution<double> aspect(0.8, 1.25);
    std::normal_distribution<double> jitter(0.0, 1.0);
    std::size_t next_label = 0;
    for (int i = 0; i < cfg.num_images; ++i) {
        SceneGraphImage img;
        img.id = padded("img_", i, 5);
        img.split = is_test[i] ? ImageSplit::Test : ImageSplit::Train;
        std::vector<int> modes_here;
        int next_id = 0;
        for (int t = 0; t < cfg.triplets_per_image; ++t) {
            const int p = labels[next_label++];
            const auto& modes = meta.modes[p];
            const int m = std::uniform_int_distribution<int>(0, static_cast<int>(modes.size()) - 1)(rng);
            const auto& mode = modes[m];
            const int cs = mode.subject_pool[std::uniform_int_distribution<std::size_t>(0, mode.subject_pool.size() - 1)(rng)];
            const int co = mode.object_pool[std::uniform_int_distribution<std::size_t>(0, mode.object_pool.size() - 1)(rng)];
            const double sw = side(rng), sh = sw * aspect(rng);
            const double scx = center(rng), scy = center(rng);
            const Box sbox = place_box(scx, scy, sw, sh);
            const double ow = sw * mode.size_ratio * aspect(rng), oh = sh * mode.size_ratio * aspect(rng);
            const Box obox = place_box(scx + mode.dx + cfg.geometry_jitter * jitter(rng),
                                       scy + mode.dy + cfg.geometry_jitter * jitter(rng), ow, oh);
            ObjectInstance so{next_id++, CategoryId{cs}, sbox, appearance(cs)};
            ObjectInstance oo{next_id++, CategoryId{co}, obox, appearance(co)};
            img.relations.push_back({so.id, PredicateId{p}, oo.id});
            img.objects.push_back(std::move(so));
            img.objects.push_back(std::move(oo));
            modes_here.push_back(m);
        }
        for (int d = 0; d < cfg.distractors_per_image; ++d) {
            const int c = std::uniform_int_distribution<int>(0, cfg.num_categories - 1)(rng);
            const double w = side(rng);
            img.objects.push_back({next_id++, CategoryId{c}, place_box(center(rng), center(rng), w, w * aspect(rng)),
                                   appearance(c)});
        }
        ds.images.push_back(std::move(img));
        meta.relation_modes.push_back(std::move(modes_here));
    }
    ds.reindex();
    validate_dataset(ds);
    return world;
}

}  // namespace fsrel
