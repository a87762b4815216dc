#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "json.hpp"

#include "fsrel/types.hpp"

namespace fsrel {

using Rng = std::mt19937_64;

// Dataset file <-> memory. Parsing validates every invariant; violations throw
// ParseError (schema) or IntegrityError (dangling references, duplicates, bad boxes).
SceneGraphDataset parse_dataset(const nlohmann::json& doc);
SceneGraphDataset load_dataset(const std::filesystem::path& path);
nlohmann::json dataset_to_json(const SceneGraphDataset& ds);
void save_dataset(const SceneGraphDataset& ds, const std::filesystem::path& path);

void validate_dataset(const SceneGraphDataset& ds);

// Deterministic appearance vector from (category, bbox, image id, seed).
std::vector<double> synthesize_appearance(const FeaturizerSpec& spec, const std::string& category,
                                          const Box& bbox, const std::string& image_id, int object_id);

// Frequency-ranked split: the n_base most annotated predicates become base, the next
// n_novel novel; ties go to the lower id. `seed` is accepted for interface stability
// and does not affect the ranking.
SplitSpec make_split(const SceneGraphDataset& ds, int n_base, int n_novel, std::uint64_t seed);

nlohmann::json split_to_json(const SceneGraphDataset& ds, const SplitSpec& split);
SplitSpec split_from_json(const SceneGraphDataset& ds, const nlohmann::json& doc);

// K supports per predicate, from distinct test images, without replacement.
// Predicates that cannot be covered are skipped and recorded in `warnings`.
SupportIndex sample_support_sets(const SceneGraphDataset& ds, const SplitSpec& split, int shots,
                                 std::uint64_t seed);

nlohmann::json support_to_json(const SceneGraphDataset& ds, const SupportIndex& index);
SupportIndex support_from_json(const SceneGraphDataset& ds, const nlohmann::json& doc);

struct EpisodeConfig {
    int categories_per_batch = 4;
    int support_min = 1;
    int support_max = 5;
    int query_min = 2;
    int query_max = 8;
    int background_ratio = 2;
    int max_retries = 32;
};

// Base-split episode over training images. Background pairs are ordered pairs
// with no annotated relation, drawn first from the episode's own images and then
// from further training images until the fg:bg ratio is met.
Episode sample_episode(const SceneGraphDataset& ds, const SplitSpec& split, const EpisodeConfig& cfg,
                       Rng& rng);

// Throws ContractViolation if any episode category or query label is not base.
void assert_base_only(const Episode& ep, const SplitSpec& split);

// True if the ordered pair carries any annotated relation.
bool pair_has_relation(const SceneGraphImage& image, int subject_index, int object_index);

nlohmann::json episode_to_json(const SceneGraphDataset& ds, const Episode& ep);

}  // namespace fsrel
