#include "fsrel/types.hpp"

#include <algorithm>

#include "fsrel/errors.hpp"

namespace fsrel {

int SceneGraphImage::object_index(int object_id) const {
    for (std::size_t i = 0; i < objects.size(); ++i)
        if (objects[i].id == object_id) return static_cast<int>(i);
    return -1;
}

void SceneGraphDataset::reindex() {
    image_lookup_.clear();
    category_lookup_.clear();
    predicate_lookup_.clear();
    for (std::size_t i = 0; i < images.size(); ++i) image_lookup_.emplace(images[i].id, static_cast<int>(i));
    for (std::size_t i = 0; i < categories.size(); ++i) category_lookup_.emplace(categories[i], static_cast<int>(i));
    for (std::size_t i = 0; i < predicates.size(); ++i) predicate_lookup_.emplace(predicates[i], static_cast<int>(i));
}

int SceneGraphDataset::image_index(const std::string& image_id) const {
    auto it = image_lookup_.find(image_id);
    return it == image_lookup_.end() ? -1 : it->second;
}

std::optional<CategoryId> SceneGraphDataset::find_category(const std::string& name) const {
    auto it = category_lookup_.find(name);
    if (it == category_lookup_.end()) return std::nullopt;
    return CategoryId{it->second};
}

std::optional<PredicateId> SceneGraphDataset::find_predicate(const std::string& name) const {
    auto it = predicate_lookup_.find(name);
    if (it == predicate_lookup_.end()) return std::nullopt;
    return PredicateId{it->second};
}

std::vector<int> SceneGraphDataset::predicate_frequencies() const {
    std::vector<int> freq(predicates.size(), 0);
    for (const auto& img : images)
        for (const auto& rel : img.relations) ++freq.at(rel.predicate.value);
    return freq;
}

bool SplitSpec::is_base(PredicateId p) const {
    return std::binary_search(base_predicates.begin(), base_predicates.end(), p);
}

bool SplitSpec::is_novel(PredicateId p) const {
    return std::binary_search(novel_predicates.begin(), novel_predicates.end(), p);
}

std::vector<PredicateId> SplitSpec::all_predicates() const {
    std::vector<PredicateId> all = base_predicates;
    all.insert(all.end(), novel_predicates.begin(), novel_predicates.end());
    std::sort(all.begin(), all.end());
    return all;
}

bool SupportIndex::is_support(const TripletRef& ref) const {
    for (const auto& [pred, refs] : entries)
        if (std::find(refs.begin(), refs.end(), ref) != refs.end()) return true;
    return false;
}

int Episode::foreground_count() const {
    return static_cast<int>(std::count_if(queries.begin(), queries.end(),
                                          [](const Query& q) { return !q.is_background(); }));
}

int Episode::background_count() const {
    return static_cast<int>(queries.size()) - foreground_count();
}

PairRef pair_of(const SceneGraphDataset& ds, const TripletRef& ref) {
    const auto& img = ds.images.at(ref.image);
    const auto& rel = img.relations.at(ref.triplet);
    PairRef p{ref.image, img.object_index(rel.subject_id), img.object_index(rel.object_id)};
    if (p.subject < 0 || p.object < 0) throw IntegrityError("triplet references a missing object in image " + img.id);
    return p;
}

}  // namespace fsrel
