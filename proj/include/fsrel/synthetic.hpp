#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"

#include "fsrel/types.hpp"

namespace fsrel {

// One realization of a predicate: which categories play subject/object and how
// the object box sits relative to the subject box.
struct PredicateMode {
    std::vector<int> subject_pool;  // category ids
    std::vector<int> object_pool;
    double dx = 0.0;  // object center minus subject center
    double dy = 0.0;
    double size_ratio = 1.0;  // object side / subject side
};

// Polysemous scene-graph world. Categories are grouped; each group owns a centroid
// at scale `mode_separation`, every category sits at unit spread around its group
// centroid, and instances add isotropic noise `appearance_noise`. Modes of one
// predicate draw their pools from different groups, so a predicate with M >= 2 has
// visually disjoint realizations.
struct WorldConfig {
    int num_categories = 24;
    int num_groups = 6;
    int num_predicates = 18;
    // Modes per predicate; empty means `default_modes` for every predicate.
    std::vector<int> modes_per_predicate;
    int default_modes = 1;
    int pool_size = 2;
    // Optional explicit modes, one list per predicate; overrides the generated ones.
    std::vector<std::vector<PredicateMode>> explicit_modes;
    double mode_separation = 6.0;
    double appearance_noise = 0.3;
    double geometry_jitter = 0.03;
    int appearance_dim = 32;
    int num_images = 600;
    int triplets_per_image = 2;
    int distractors_per_image = 1;
    double test_fraction = 0.3;
    // Annotation share of predicate r is proportional to 1 / (1 + frequency_decay * r).
    double frequency_decay = 0.15;
};

nlohmann::json world_config_to_json(const WorldConfig& cfg);
WorldConfig world_config_from_json(const nlohmann::json& doc);

struct WorldMetadata {
    std::vector<std::vector<PredicateMode>> modes;  // per predicate
    std::vector<int> category_group;
    // Mode id per (image, relation), parallel to dataset images/relations.
    std::vector<std::vector<int>> relation_modes;
};

nlohmann::json world_metadata_to_json(const WorldMetadata& meta);

struct SyntheticWorld {
    SceneGraphDataset dataset;
    WorldMetadata metadata;
};

SyntheticWorld generate_synthetic_world(const WorldConfig& cfg, std::uint64_t seed);

}  // namespace fsrel
