#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "fsrel/metric.hpp"
#include "fsrel/model.hpp"
#include "fsrel/prototype.hpp"
#include "fsrel/types.hpp"

namespace fsrel {

struct TripletPrediction {
    int image = -1;        // dataset image index
    int subject = -1;      // object index inside the image
    int object = -1;
    CategoryId subject_label;
    CategoryId object_label;
    PredicateId predicate;
    double score = 0.0;    // joint softmax probability, background dropped
    int pair_index = -1;   // subject-major ordered-pair slot inside the image
};

struct GroundTruthTriplet {
    int image = -1;
    int subject = -1;
    int object = -1;
    CategoryId subject_label;
    CategoryId object_label;
    PredicateId predicate;
};

// Every relation of the test images whose predicate is in `predicates`, minus the
// support triplets.
std::vector<GroundTruthTriplet> collect_ground_truth(const SceneGraphDataset& ds, std::span<const PredicateId> predicates,
                                                     const SupportIndex& supports);

struct SplitRecall {
    bool available = false;                 // false when the split has no ground truth at all
    int evaluated_categories = 0;
    std::map<int, double> mean_recall;      // K -> mR@K
    std::map<PredicateId, std::map<int, double>> per_predicate;  // recall@K per predicate with gt
    std::map<PredicateId, int> gt_counts;
};

// Graph-constrained mR@K of `preds` over the split's categories.
SplitRecall mean_recall(std::span<const TripletPrediction> preds, std::span<const GroundTruthTriplet> gt,
                        std::span<const int> k_list, std::span<const PredicateId> split_categories);

// One top-scoring prediction per ordered pair (ties to the lower predicate id).
std::vector<TripletPrediction> apply_graph_constraint(std::span<const TripletPrediction> preds);

// Per-image ranking: score descending, then predicate id, then pair index.
void rank_predictions(std::vector<TripletPrediction>& preds);

// Detached support-side state of one predicate.
struct PredicateBank {
    PredicateId predicate;
    std::optional<PrototypeBankValues> prototypes;
    Eigen::MatrixXd support_final;  // d_final x K
    std::vector<LabelPair> support_labels;
};

class EvalBanks {
public:
    // Builds the bank and support embeddings of every predicate in `supports`.
    EvalBanks(const Model& model, const SceneGraphDataset& ds, const SupportIndex& supports);

    const PredicateBank& at(PredicateId p) const;
    bool contains(PredicateId p) const { return banks_.count(p) > 0; }
    std::vector<PredicateId> predicates() const;

private:
    std::map<PredicateId, PredicateBank> banks_;
};

// Scores every ordered pair of the image against `predicates` jointly with the
// background candidate. Throws ProtocolError when a predicate has no bank.
std::vector<TripletPrediction> score_image(const Model& model, const SceneGraphDataset& ds, int image_index,
                                           const EvalBanks& banks, std::span<const PredicateId> predicates,
                                           const LabelEmbedder& labels, Task task);

struct EvalReport {
    Task task = Task::PredCls;
    int shots = 0;
    std::vector<int> k_list;
    std::vector<PredicateId> evaluated;    // predicates that entered the joint softmax
    std::vector<PredicateId> excluded;     // split predicates without a support set
    SplitRecall base, novel;
};

struct EvaluateOptions {
    std::vector<int> k_list{20, 50, 100};
    int workers = 0;  // 0: FSREL_NUM_WORKERS or hardware concurrency
    std::vector<TripletPrediction>* predictions_out = nullptr;
};

EvalReport evaluate(const SceneGraphDataset& ds, const SplitSpec& split, const SupportIndex& supports,
                    const Model& model, Task task, const EvaluateOptions& options = {});

nlohmann::json eval_report_to_json(const SceneGraphDataset& ds, const EvalReport& r);
nlohmann::json prediction_to_json(const SceneGraphDataset& ds, const TripletPrediction& p);

// Worker count from FSREL_NUM_WORKERS (>=1), else hardware concurrency.
int eval_worker_count();

}  // namespace fsrel
