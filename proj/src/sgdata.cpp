#include "fsrel/sgdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "fsrel/errors.hpp"
#include "fsrel/hash.hpp"

namespace fsrel {

using nlohmann::json;

namespace {

std::string record(std::size_t image, const std::string& image_id) {
    return "images[" + std::to_string(image) + "] (id '" + image_id + "')";
}

const json& require(const json& obj, const char* key, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key)) throw ParseError(where + ": missing field '" + key + "'");
    return obj.at(key);
}

std::vector<std::string> parse_names(const json& doc, const char* key) {
    const auto& arr = require(doc, key, "dataset");
    if (!arr.is_array()) throw ParseError(std::string("dataset: '") + key + "' must be an array");
    std::vector<std::string> names;
    for (std::size_t i = 0; i < arr.size(); ++i) {
        if (!arr[i].is_string())
            throw ParseError(std::string(key) + "[" + std::to_string(i) + "]: expected a string");
        names.push_back(arr[i].get<std::string>());
    }
    return names;
}

double as_number(const json& v, const std::string& where) {
    if (!v.is_number()) throw ParseError(where + ": expected a number");
    return v.get<double>();
}

int as_int(const json& v, const std::string& where) {
    if (!v.is_number_integer()) throw ParseError(where + ": expected an integer");
    return v.get<int>();
}

}  // namespace

std::vector<double> synthesize_appearance(const FeaturizerSpec& spec, const std::string& category,
                                          const Box& bbox, const std::string& image_id, int object_id) {
    Rng centroid_rng(mix_seed({spec.seed, fnv1a(category)}));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> out(spec.dim);
    for (auto& v : out) v = normal(centroid_rng);

    Fnv1a h;
    h.update_pod(spec.seed);
    h.update(image_id);
    h.update_pod(object_id);
    h.update_pod(bbox.x1);
    h.update_pod(bbox.y1);
    h.update_pod(bbox.x2);
    h.update_pod(bbox.y2);
    Rng instance_rng(h.digest());
    for (auto& v : out) v += spec.noise * normal(instance_rng);
    return out;
}

void validate_dataset(const SceneGraphDataset& ds) {
    std::set<std::string> seen_images;
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        const auto& img = ds.images[i];
        const std::string where = record(i, img.id);
        if (!seen_images.insert(img.id).second) throw IntegrityError(where + ": duplicate image id");
        std::set<int> ids;
        for (std::size_t k = 0; k < img.objects.size(); ++k) {
            const auto& obj = img.objects[k];
            const std::string ow = where + ".objects[" + std::to_string(k) + "]";
            if (!ids.insert(obj.id).second) throw IntegrityError(ow + ": duplicate object id " + std::to_string(obj.id));
            if (obj.category.value < 0 || obj.category.value >= ds.num_categories())
                throw IntegrityError(ow + ": category out of vocabulary");
            const auto& b = obj.bbox;
            if (!(0.0 <= b.x1 && b.x1 < b.x2 && b.x2 <= 1.0 && 0.0 <= b.y1 && b.y1 < b.y2 && b.y2 <= 1.0))
                throw IntegrityError(ow + ": bbox must satisfy 0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1");
            if (static_cast<int>(obj.appearance.size()) != ds.appearance_dim)
                throw IntegrityError(ow + ": appearance has " + std::to_string(obj.appearance.size()) +
                                     " entries, expected " + std::to_string(ds.appearance_dim));
            for (double v : obj.appearance)
                if (!std::isfinite(v)) throw IntegrityError(ow + ": non-finite appearance entry");
        }
        std::set<std::tuple<int, int, int>> triplets;
        for (std::size_t r = 0; r < img.relations.size(); ++r) {
            const auto& rel = img.relations[r];
            const std::string rw = where + ".relations[" + std::to_string(r) + "]";
            if (!ids.count(rel.subject_id))
                throw IntegrityError(rw + ": subject references missing object id " + std::to_string(rel.subject_id));
            if (!ids.count(rel.object_id))
                throw IntegrityError(rw + ": object references missing object id " + std::to_string(rel.object_id));
            if (rel.subject_id == rel.object_id) throw IntegrityError(rw + ": subject and object are the same object");
            if (rel.predicate.value < 0 || rel.predicate.value >= ds.num_predicates())
                throw IntegrityError(rw + ": predicate out of vocabulary");
            if (!triplets.emplace(rel.subject_id, rel.predicate.value, rel.object_id).second)
                throw IntegrityError(rw + ": duplicate triplet");
        }
    }
}

SceneGraphDataset parse_dataset(const json& doc) {
    if (!doc.is_object()) throw ParseError("dataset: top level must be an object");
    SceneGraphDataset ds;
    ds.categories = parse_names(doc, "categories");
    ds.predicates = parse_names(doc, "predicates");
    ds.reindex();

    if (doc.contains("featurizer")) {
        const auto& f = doc.at("featurizer");
        FeaturizerSpec spec;
        spec.dim = as_int(require(f, "dim", "featurizer"), "featurizer.dim");
        spec.seed = require(f, "seed", "featurizer").get<std::uint64_t>();
        if (f.contains("noise")) spec.noise = as_number(f.at("noise"), "featurizer.noise");
        if (spec.dim <= 0) throw ParseError("featurizer.dim must be positive");
        ds.featurizer = spec;
        ds.appearance_dim = spec.dim;
    }

    const auto& images = require(doc, "images", "dataset");
    if (!images.is_array()) throw ParseError("dataset: 'images' must be an array");
    bool dim_known = ds.featurizer.has_value();
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto& ji = images[i];
        SceneGraphImage img;
        const auto& jid = require(ji, "id", "images[" + std::to_string(i) + "]");
        if (!jid.is_string()) throw ParseError("images[" + std::to_string(i) + "].id: expected a string");
        img.id = jid.get<std::string>();
        const std::string where = record(i, img.id);
        if (ji.contains("split")) {
            const auto s = ji.at("split").get<std::string>();
            if (s == "train") img.split = ImageSplit::Train;
            else if (s == "test") img.split = ImageSplit::Test;
            else throw ParseError(where + ".split: expected 'train' or 'test'");
        }
        const auto& objs = require(ji, "objects", where);
        if (!objs.is_array()) throw ParseError(where + ".objects: expected an array");
        for (std::size_t k = 0; k < objs.size(); ++k) {
            const auto& jo = objs[k];
            const std::string ow = where + ".objects[" + std::to_string(k) + "]";
            ObjectInstance obj;
            obj.id = as_int(require(jo, "id", ow), ow + ".id");
            const auto& jc = require(jo, "category", ow);
            if (!jc.is_string()) throw ParseError(ow + ".category: expected a string");
            auto cat = ds.find_category(jc.get<std::string>());
            if (!cat) throw IntegrityError(ow + ": unknown category '" + jc.get<std::string>() + "'");
            obj.category = *cat;
            const auto& jb = require(jo, "bbox", ow);
            if (!jb.is_array() || jb.size() != 4) throw ParseError(ow + ".bbox: expected 4 numbers");
            obj.bbox = Box{as_number(jb[0], ow + ".bbox"), as_number(jb[1], ow + ".bbox"),
                           as_number(jb[2], ow + ".bbox"), as_number(jb[3], ow + ".bbox")};
            if (jo.contains("appearance")) {
                const auto& ja = jo.at("appearance");
                if (!ja.is_array()) throw ParseError(ow + ".appearance: expected an array");
                for (const auto& v : ja) obj.appearance.push_back(as_number(v, ow + ".appearance"));
                if (!dim_known) {
                    ds.appearance_dim = static_cast<int>(obj.appearance.size());
                    dim_known = true;
                }
            } else if (ds.featurizer) {
                obj.appearance = synthesize_appearance(*ds.featurizer, ds.categories[obj.category.value], obj.bbox,
                                                       img.id, obj.id);
            } else {
                throw ParseError(ow + ": no appearance vector and no featurizer block");
            }
            img.objects.push_back(std::move(obj));
        }
        const auto& rels = require(ji, "relations", where);
        if (!rels.is_array()) throw ParseError(where + ".relations: expected an array");
        for (std::size_t r = 0; r < rels.size(); ++r) {
            const auto& jr = rels[r];
            const std::string rw = where + ".relations[" + std::to_string(r) + "]";
            RelationTriplet rel;
            rel.subject_id = as_int(require(jr, "subject", rw), rw + ".subject");
            rel.object_id = as_int(require(jr, "object", rw), rw + ".object");
            const auto& jp = require(jr, "predicate", rw);
            if (!jp.is_string()) throw ParseError(rw + ".predicate: expected a string");
            auto pred = ds.find_predicate(jp.get<std::string>());
            if (!pred) throw IntegrityError(rw + ": unknown predicate '" + jp.get<std::string>() + "'");
            rel.predicate = *pred;
            img.relations.push_back(rel);
        }
        ds.images.push_back(std::move(img));
    }
    ds.reindex();
    validate_dataset(ds);
    return ds;
}

SceneGraphDataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open dataset file " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return parse_dataset(doc);
}

json dataset_to_json(const SceneGraphDataset& ds) {
    json doc;
    doc["categories"] = ds.categories;
    doc["predicates"] = ds.predicates;
    if (ds.featurizer) {
        doc["featurizer"] = {{"dim", ds.featurizer->dim}, {"seed", ds.featurizer->seed},
                             {"noise", ds.featurizer->noise}};
    }
    json images = json::array();
    for (const auto& img : ds.images) {
        json ji;
        ji["id"] = img.id;
        ji["split"] = img.split == ImageSplit::Train ? "train" : "test";
        json objs = json::array();
        for (const auto& o : img.objects) {
            objs.push_back({{"id", o.id},
                            {"category", ds.categories.at(o.category.value)},
                            {"bbox", {o.bbox.x1, o.bbox.y1, o.bbox.x2, o.bbox.y2}},
                            {"appearance", o.appearance}});
        }
        ji["objects"] = std::move(objs);
        json rels = json::array();
        for (const auto& r : img.relations)
            rels.push_back({{"subject", r.subject_id},
                            {"predicate", ds.predicates.at(r.predicate.value)},
                            {"object", r.object_id}});
        ji["relations"] = std::move(rels);
        images.push_back(std::move(ji));
    }
    doc["images"] = std::move(images);
    return doc;
}

void save_dataset(const SceneGraphDataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << dataset_to_json(ds).dump() << '\n';
}

SplitSpec make_split(const SceneGraphDataset& ds, int n_base, int n_novel, std::uint64_t /*seed*/) {
    if (n_base < 0 || n_novel < 0) throw ConfigError("split sizes must be non-negative");
    const auto freq = ds.predicate_frequencies();
    std::vector<int> annotated;
    for (int p = 0; p < static_cast<int>(freq.size()); ++p)
        if (freq[p] > 0) annotated.push_back(p);
    if (n_base + n_novel > static_cast<int>(annotated.size()))
        throw ConfigError("split asks for " + std::to_string(n_base + n_novel) + " predicates but only " +
                          std::to_string(annotated.size()) + " are annotated");
    std::stable_sort(annotated.begin(), annotated.end(), [&](int a, int b) {
        if (freq[a] != freq[b]) return freq[a] > freq[b];
        return a < b;
    });
    SplitSpec split;
    for (int i = 0; i < n_base; ++i) split.base_predicates.emplace_back(annotated[i]);
    for (int i = n_base; i < n_base + n_novel; ++i) split.novel_predicates.emplace_back(annotated[i]);
    std::sort(split.base_predicates.begin(), split.base_predicates.end());
    std::sort(split.novel_predicates.begin(), split.novel_predicates.end());
    for (int c = 0; c < ds.num_categories(); ++c) split.object_categories.emplace_back(c);
    return split;
}

json split_to_json(const SceneGraphDataset& ds, const SplitSpec& split) {
    json doc;
    doc["base"] = json::array();
    doc["novel"] = json::array();
    for (auto p : split.base_predicates) doc["base"].push_back(ds.predicate_name(p));
    for (auto p : split.novel_predicates) doc["novel"].push_back(ds.predicate_name(p));
    return doc;
}

SplitSpec split_from_json(const SceneGraphDataset& ds, const json& doc) {
    SplitSpec split;
    auto read = [&](const char* key, std::vector<PredicateId>& out) {
        const auto& arr = require(doc, key, "split");
        if (!arr.is_array()) throw ParseError(std::string("split.") + key + ": expected an array");
        for (const auto& v : arr) {
            auto p = ds.find_predicate(v.get<std::string>());
            if (!p) throw VocabularyError("split: unknown predicate '" + v.get<std::string>() + "'");
            out.push_back(*p);
        }
        std::sort(out.begin(), out.end());
    };
    read("base", split.base_predicates);
    read("novel", split.novel_predicates);
    for (auto p : split.base_predicates)
        if (split.is_novel(p)) throw IntegrityError("split: predicate '" + ds.predicate_name(p) + "' is both base and novel");
    for (int c = 0; c < ds.num_categories(); ++c) split.object_categories.emplace_back(c);
    return split;
}

SupportIndex sample_support_sets(const SceneGraphDataset& ds, const SplitSpec& split, int shots,
                                 std::uint64_t seed) {
    if (shots < 1) throw ConfigError("shots must be a positive integer");
    SupportIndex index;
    index.shots = shots;

    // predicate -> image -> triplet indices, test images only
    std::map<int, std::map<int, std::vector<int>>> pool;
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        const auto& img = ds.images[i];
        if (img.split != ImageSplit::Test) continue;
        for (std::size_t r = 0; r < img.relations.size(); ++r)
            pool[img.relations[r].predicate.value][static_cast<int>(i)].push_back(static_cast<int>(r));
    }

    for (auto pred : split.all_predicates()) {
        const auto& by_image = pool[pred.value];
        std::vector<int> images;
        for (const auto& [img, _] : by_image) images.push_back(img);
        if (static_cast<int>(images.size()) < shots) {
            index.warnings.push_back("predicate '" + ds.predicate_name(pred) + "': " +
                                     std::to_string(images.size()) + " test images with an annotation, need " +
                                     std::to_string(shots) + "; excluded from evaluation");
            continue;
        }
        Rng rng(mix_seed({seed, static_cast<std::uint64_t>(pred.value)}));
        std::shuffle(images.begin(), images.end(), rng);
        std::vector<TripletRef> chosen;
        for (int k = 0; k < shots; ++k) {
            const auto& trips = by_image.at(images[k]);
            std::uniform_int_distribution<std::size_t> pick(0, trips.size() - 1);
            chosen.push_back({images[k], trips[pick(rng)]});
        }
        index.entries.emplace(pred, std::move(chosen));
    }
    return index;
}

json support_to_json(const SceneGraphDataset& ds, const SupportIndex& index) {
    json doc;
    doc["shots"] = index.shots;
    doc["entries"] = json::object();
    for (const auto& [pred, refs] : index.entries) {
        json arr = json::array();
        for (const auto& r : refs) arr.push_back({{"image", ds.images.at(r.image).id}, {"triplet", r.triplet}});
        doc["entries"][ds.predicate_name(pred)] = std::move(arr);
    }
    if (!index.warnings.empty()) doc["warnings"] = index.warnings;
    return doc;
}

SupportIndex support_from_json(const SceneGraphDataset& ds, const json& doc) {
    SupportIndex index;
    index.shots = as_int(require(doc, "shots", "support"), "support.shots");
    const auto& entries = require(doc, "entries", "support");
    if (!entries.is_object()) throw ParseError("support.entries: expected an object");
    for (const auto& [name, arr] : entries.items()) {
        auto pred = ds.find_predicate(name);
        if (!pred) throw VocabularyError("support: unknown predicate '" + name + "'");
        if (!arr.is_array() || static_cast<int>(arr.size()) != index.shots)
            throw IntegrityError("support." + name + ": expected exactly " + std::to_string(index.shots) + " entries");
        std::vector<TripletRef> refs;
        for (const auto& e : arr) {
            int img = ds.image_index(require(e, "image", "support." + name).get<std::string>());
            if (img < 0) throw IntegrityError("support." + name + ": unknown image");
            int trip = as_int(require(e, "triplet", "support." + name), "support." + name + ".triplet");
            if (trip < 0 || trip >= static_cast<int>(ds.images[img].relations.size()))
                throw IntegrityError("support." + name + ": triplet index out of range");
            if (ds.images[img].relations[trip].predicate != *pred)
                throw IntegrityError("support." + name + ": referenced triplet carries another predicate");
            refs.push_back({img, trip});
        }
        index.entries.emplace(*pred, std::move(refs));
    }
    if (doc.contains("warnings")) index.warnings = doc.at("warnings").get<std::vector<std::string>>();
    return index;
}

bool pair_has_relation(const SceneGraphImage& image, int subject_index, int object_index) {
    const int s = image.objects.at(subject_index).id;
    const int o = image.objects.at(object_index).id;
    for (const auto& r : image.relations)
        if (r.subject_id == s && r.object_id == o) return true;
    return false;
}

namespace {

void append_background_candidates(const SceneGraphImage& img, int image_index, std::vector<PairRef>& out) {
    const int n = static_cast<int>(img.objects.size());
    for (int s = 0; s < n; ++s)
        for (int o = 0; o < n; ++o)
            if (s != o && !pair_has_relation(img, s, o)) out.push_back({image_index, s, o});
}

}  // namespace

Episode sample_episode(const SceneGraphDataset& ds, const SplitSpec& split, const EpisodeConfig& cfg, Rng& rng) {
    if (cfg.categories_per_batch < 1 || cfg.support_min < 1 || cfg.support_max < cfg.support_min ||
        cfg.query_min < 1 || cfg.query_max < cfg.query_min || cfg.background_ratio < 0)
        throw ConfigError("invalid episode configuration");

    std::map<PredicateId, std::vector<TripletRef>> positives;
    std::vector<int> train_images;
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        const auto& img = ds.images[i];
        if (img.split != ImageSplit::Train) continue;
        train_images.push_back(static_cast<int>(i));
        for (std::size_t r = 0; r < img.relations.size(); ++r)
            if (split.is_base(img.relations[r].predicate))
                positives[img.relations[r].predicate].push_back({static_cast<int>(i), static_cast<int>(r)});
    }

    std::vector<PredicateId> candidates;
    for (auto p : split.base_predicates) candidates.push_back(p);

    Episode ep;
    std::vector<PredicateId> pool = candidates;
    int attempts = 0;
    while (static_cast<int>(ep.categories.size()) < cfg.categories_per_batch && !pool.empty()) {
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        const std::size_t at = pick(rng);
        const PredicateId p = pool[at];
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(at));
        auto it = positives.find(p);
        if (it == positives.end() || it->second.size() < 2) {
            if (++attempts > cfg.max_retries) break;
            continue;  // resample
        }
        ep.categories.push_back(p);
    }
    if (ep.categories.empty())
        throw SamplingError("no base predicate has at least 2 training positives");

    std::set<int> episode_images;
    for (auto p : ep.categories) {
        auto refs = positives.at(p);
        std::shuffle(refs.begin(), refs.end(), rng);
        const int n = static_cast<int>(refs.size());
        const int smax = std::min(cfg.support_max, n - 1);
        const int smin = std::min(cfg.support_min, smax);
        const int n_sup = std::uniform_int_distribution<int>(smin, smax)(rng);
        const int remaining = n - n_sup;
        const int qmax = std::min(cfg.query_max, remaining);
        const int qmin = std::min(cfg.query_min, qmax);
        const int n_q = std::uniform_int_distribution<int>(qmin, qmax)(rng);
        auto& sup = ep.supports[p];
        for (int k = 0; k < n_sup; ++k) {
            sup.push_back(refs[k]);
            episode_images.insert(refs[k].image);
        }
        for (int k = n_sup; k < n_sup + n_q; ++k) {
            ep.queries.push_back({pair_of(ds, refs[k]), p, refs[k]});
            episode_images.insert(refs[k].image);
        }
    }

    const int need = cfg.background_ratio * ep.foreground_count();
    std::vector<PairRef> bg;
    for (int img : episode_images) append_background_candidates(ds.images[img], img, bg);
    std::shuffle(bg.begin(), bg.end(), rng);
    if (static_cast<int>(bg.size()) < need && !train_images.empty()) {
        std::set<int> visited = episode_images;
        std::uniform_int_distribution<std::size_t> pick(0, train_images.size() - 1);
        for (int tries = 0; static_cast<int>(bg.size()) < need && tries < cfg.max_retries * 4; ++tries) {
            const int img = train_images[pick(rng)];
            if (!visited.insert(img).second) continue;
            std::vector<PairRef> extra;
            append_background_candidates(ds.images[img], img, extra);
            std::shuffle(extra.begin(), extra.end(), rng);
            bg.insert(bg.end(), extra.begin(), extra.end());
        }
    }
    const int take = std::min<int>(need, static_cast<int>(bg.size()));
    for (int k = 0; k < take; ++k) ep.queries.push_back({bg[k], std::nullopt, {}});
    return ep;
}

void assert_base_only(const Episode& ep, const SplitSpec& split) {
    for (auto p : ep.categories)
        if (!split.is_base(p)) throw ContractViolation("training episode contains non-base predicate id " + std::to_string(p.value));
    for (const auto& q : ep.queries)
        if (q.label && !split.is_base(*q.label))
            throw ContractViolation("training query labeled with non-base predicate id " + std::to_string(q.label->value));
}

json episode_to_json(const SceneGraphDataset& ds, const Episode& ep) {
    json doc;
    doc["categories"] = json::array();
    for (auto p : ep.categories) doc["categories"].push_back(ds.predicate_name(p));
    doc["supports"] = json::object();
    for (const auto& [p, refs] : ep.supports) {
        json arr = json::array();
        for (const auto& r : refs) arr.push_back({{"image", ds.images.at(r.image).id}, {"triplet", r.triplet}});
        doc["supports"][ds.predicate_name(p)] = std::move(arr);
    }
    doc["queries"] = json::array();
    for (const auto& q : ep.queries) {
        const auto& img = ds.images.at(q.pair.image);
        doc["queries"].push_back({{"image", img.id},
                                  {"subject", img.objects.at(q.pair.subject).id},
                                  {"object", img.objects.at(q.pair.object).id},
                                  {"label", q.label ? json(ds.predicate_name(*q.label)) : json("__background__")}});
    }
    return doc;
}

}  // namespace fsrel
