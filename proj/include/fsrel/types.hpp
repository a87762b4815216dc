#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace fsrel {

template <class Tag>
struct Id {
    int value = -1;

    constexpr Id() = default;
    constexpr explicit Id(int v) : value(v) {}

    friend constexpr auto operator<=>(Id, Id) = default;
};

using CategoryId = Id<struct CategoryTag>;
using PredicateId = Id<struct PredicateTag>;

// Normalized (x1, y1, x2, y2), all in [0, 1].
struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    double cx() const { return 0.5 * (x1 + x2); }
    double cy() const { return 0.5 * (y1 + y2); }

    friend bool operator==(const Box&, const Box&) = default;
};

struct ObjectInstance {
    int id = 0;
    CategoryId category;
    Box bbox;
    std::vector<double> appearance;

    friend bool operator==(const ObjectInstance&, const ObjectInstance&) = default;
};

// subject_id / object_id are object ids (not indices) within the owning image.
struct RelationTriplet {
    int subject_id = 0;
    PredicateId predicate;
    int object_id = 0;

    friend bool operator==(const RelationTriplet&, const RelationTriplet&) = default;
};

enum class ImageSplit { Train, Test };

struct SceneGraphImage {
    std::string id;
    std::vector<ObjectInstance> objects;
    std::vector<RelationTriplet> relations;
    ImageSplit split = ImageSplit::Train;

    // Index into `objects` for an object id, or -1.
    int object_index(int object_id) const;

    friend bool operator==(const SceneGraphImage&, const SceneGraphImage&) = default;
};

// Deterministic hash-seeded appearance synthesis for files without stored features.
struct FeaturizerSpec {
    int dim = 32;
    std::uint64_t seed = 0;
    double noise = 0.1;

    friend bool operator==(const FeaturizerSpec&, const FeaturizerSpec&) = default;
};

class SceneGraphDataset {
public:
    std::vector<std::string> categories;
    std::vector<std::string> predicates;
    std::vector<SceneGraphImage> images;
    int appearance_dim = 0;
    std::optional<FeaturizerSpec> featurizer;

    int num_categories() const { return static_cast<int>(categories.size()); }
    int num_predicates() const { return static_cast<int>(predicates.size()); }

    // Rebuilds the name/id lookup tables; call after mutating `images` or vocabularies.
    void reindex();

    int image_index(const std::string& image_id) const;
    std::optional<CategoryId> find_category(const std::string& name) const;
    std::optional<PredicateId> find_predicate(const std::string& name) const;

    const std::string& category_name(CategoryId c) const { return categories.at(c.value); }
    const std::string& predicate_name(PredicateId p) const { return predicates.at(p.value); }

    // Annotation count per predicate over the whole corpus.
    std::vector<int> predicate_frequencies() const;

    friend bool operator==(const SceneGraphDataset& a, const SceneGraphDataset& b) {
        return a.categories == b.categories && a.predicates == b.predicates && a.images == b.images &&
               a.appearance_dim == b.appearance_dim && a.featurizer == b.featurizer;
    }

private:
    std::unordered_map<std::string, int> image_lookup_;
    std::unordered_map<std::string, int> category_lookup_;
    std::unordered_map<std::string, int> predicate_lookup_;
};

struct SplitSpec {
    std::vector<PredicateId> base_predicates;   // ascending id
    std::vector<PredicateId> novel_predicates;  // ascending id
    std::vector<CategoryId> object_categories;

    bool is_base(PredicateId p) const;
    bool is_novel(PredicateId p) const;
    // base ∪ novel, ascending id.
    std::vector<PredicateId> all_predicates() const;

    friend bool operator==(const SplitSpec&, const SplitSpec&) = default;
};

// (image index, triplet index) into a dataset.
struct TripletRef {
    int image = -1;
    int triplet = -1;

    friend auto operator<=>(const TripletRef&, const TripletRef&) = default;
};

struct SupportIndex {
    int shots = 0;
    std::map<PredicateId, std::vector<TripletRef>> entries;
    // One human-readable record per predicate that could not be covered.
    std::vector<std::string> warnings;

    bool is_support(const TripletRef& ref) const;

    friend bool operator==(const SupportIndex& a, const SupportIndex& b) {
        return a.shots == b.shots && a.entries == b.entries;
    }
};

// Ordered object pair inside one image, by object index.
struct PairRef {
    int image = -1;
    int subject = -1;
    int object = -1;

    friend auto operator<=>(const PairRef&, const PairRef&) = default;
};

struct Query {
    PairRef pair;
    std::optional<PredicateId> label;  // nullopt: background
    TripletRef source;                 // triplet the fg query came from; {-1,-1} for background

    bool is_background() const { return !label.has_value(); }
};

struct Episode {
    std::vector<PredicateId> categories;
    std::map<PredicateId, std::vector<TripletRef>> supports;
    std::vector<Query> queries;

    int foreground_count() const;
    int background_count() const;
};

// Object-index pair for a triplet.
PairRef pair_of(const SceneGraphDataset& ds, const TripletRef& ref);

}  // namespace fsrel
