#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "fsrel/autodiff.hpp"
#include "fsrel/errors.hpp"
#include "fsrel/metric.hpp"
#include "fsrel/model.hpp"
#include "fsrel/sgdata.hpp"
#include "fsrel/types.hpp"

namespace fsrel {

// ---- losses on plain values -------------------------------------------------

// Mean over queries of -log softmax(-d_i)[y_i]; each d_i holds one distance per
// candidate (background included as an ordinary candidate).
double relation_loss(std::span<const Eigen::VectorXd> distances, std::span<const int> positives);
// KL(p || q) with an eps floor on both sides before the log.
double kl_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q, double eps = 1e-8);
// Mean over queries of KL(y_hat_i || y_pro_i).
double kl_loss(std::span<const Eigen::VectorXd> y_hat, std::span<const Eigen::VectorXd> y_pro, double eps = 1e-8);
// Mean cross-entropy; logits are |C| x n, one column per object.
double object_loss(const Eigen::MatrixXd& logits, std::span<const int> labels);

// ---- episode forward ----------------------------------------------------------

struct QueryScores {
    std::vector<std::optional<PredicateId>> candidates;  // episode categories, then background (nullopt)
    int positive = -1;                                   // index into candidates
    Eigen::VectorXd distances;                           // d̃ (or d) per candidate, d_bg last
    Eigen::VectorXd y_hat;                               // softmax(-distances)
    Eigen::VectorXd prototype_distances;                 // empty without the prototype module
    Eigen::VectorXd y_pro;
};

struct EpisodeScores {
    std::vector<QueryScores> queries;
};

struct EpisodeForward {
    ad::Var relation, kl, object, total;
    EpisodeScores scores;
};

// Records the full loss of one episode on `tape`. Label embeddings are treated as
// constants. When `teacher` is given it replaces y_hat as the KL target (one entry
// per query); otherwise the detached y_hat of this pass is used.
EpisodeForward forward_episode(ad::Tape& tape, const Model& model, const SceneGraphDataset& ds, const Episode& ep,
                               const LabelEmbedder& labels, const std::vector<Eigen::VectorXd>* teacher = nullptr);

// ---- optimization -------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::uint64_t t = 0;
    std::vector<Eigen::MatrixXd> m, v;  // parallel to ParameterStore::all()
};

class Adam {
public:
    Adam(const ad::ParameterStore& store, AdamConfig cfg);

    // Updates every trainable parameter from its accumulated grad.
    void step(ad::ParameterStore& store);

    const AdamConfig& config() const { return cfg_; }
    const AdamState& state() const { return state_; }
    void set_state(AdamState s) { state_ = std::move(s); }

private:
    AdamConfig cfg_;
    AdamState state_;
};

struct LossReport {
    double relation = 0, kl = 0, object = 0, total = 0;
    double grad_norm = 0;
    std::map<std::string, double> group_grad_norms;
};

nlohmann::json loss_report_to_json(std::uint64_t step, const LossReport& r);

class NonFiniteLossError : public NumericalError {
public:
    NonFiniteLossError(const std::string& what, Episode ep) : NumericalError(what), episode(std::move(ep)) {}
    Episode episode;
};

// One optimizer update on a base-split episode.
LossReport train_step(const Episode& ep, Model& model, Adam& optimizer, const SceneGraphDataset& ds,
                      const SplitSpec& split);

// Loss report without an update.
LossReport evaluate_loss(const Episode& ep, const Model& model, const SceneGraphDataset& ds);

// ---- gradient checking --------------------------------------------------------

struct GradientSample {
    std::string parameter;
    Eigen::Index index = 0;
    double analytic = 0;
    double numeric = 0;
    double rel_error = 0;
};

// Central finite differences of L_total on one episode, compared with the tape
// gradient. Label embeddings and the KL target are frozen at the unperturbed values
// so both routes differentiate the same function. `per_group` entries are drawn from
// each trainable parameter group, preferring entries with a non-negligible gradient.
std::vector<GradientSample> finite_difference_check(Model& model, const SceneGraphDataset& ds, const Episode& ep,
                                                    int per_group, std::uint64_t seed, double step = 1e-5);

// ---- checkpoints --------------------------------------------------------------

struct TrainingState {
    std::uint64_t step = 0;
    std::optional<AdamState> optimizer;
    std::string rng_state;
};

// Binary container: header {magic, format version, config hash, step, config JSON},
// named parameter blobs, optimizer moments, rng state and a trailing FNV-1a checksum.
void save_checkpoint(const Model& model, const TrainingState& state, const std::filesystem::path& path);

struct LoadedCheckpoint {
    Model model;
    TrainingState state;
};

// Throws IntegrityError on a bad checksum or truncated file. With `expected`, a
// config-hash mismatch is refused unless `allow_config_mismatch`; shape-changing
// differences are always a ConfigError.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr,
                                 bool allow_config_mismatch = false);

}  // namespace fsrel
