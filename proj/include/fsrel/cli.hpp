#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fsrel/eval.hpp"
#include "fsrel/model.hpp"
#include "fsrel/model_config.hpp"
#include "fsrel/sgdata.hpp"
#include "fsrel/synthetic.hpp"
#include "fsrel/training.hpp"

namespace fsrel::cli {

struct Seeds {
    std::uint64_t data_seed = 1;
    std::uint64_t split_seed = 2;
    std::uint64_t support_seed = 3;
    std::uint64_t train_seed = 4;
    std::uint64_t eval_seed = 5;
};

struct TrainSettings {
    int steps = 2000;
    int checkpoint_every = 0;  // 0: only at the end
    bool resume = false;
};

struct EvalSettings {
    int shots = 5;
    std::vector<int> recall_k{20, 50, 100};
    Task task = Task::PredCls;
    bool dump_predictions = false;
};

struct WeightsDumpSettings {
    std::string predicate;         // empty: every novel predicate with a support set
    int max_queries = 10;          // per predicate, drawn with eval_seed
    nlohmann::json queries = nlohmann::json::array();  // explicit {"image","subject","object","predicate"} specs
};

struct ExperimentConfig {
    std::string dataset;  // empty: <out>/dataset.json
    WorldConfig world;
    int n_base = 12;
    int n_novel = 6;
    EpisodeConfig episode;
    ModelConfig model;    // vocabulary sizes are taken from the dataset
    AdamConfig optimizer;
    TrainSettings train;
    EvalSettings eval;
    WeightsDumpSettings weights_dump;
    bool allow_config_mismatch = false;
    Seeds seeds;
};

// Normalized form: every field present, vocabulary sizes omitted from "model".
nlohmann::json experiment_config_to_json(const ExperimentConfig& c);
// Missing keys keep their defaults; unknown keys and bad values are ConfigErrors.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
// Applies "a.b.c=value" to the normalized config; the value is parsed as JSON when
// possible, otherwise taken as a string.
void apply_override(nlohmann::json& normalized, const std::string& assignment);
ExperimentConfig load_experiment_config(const std::filesystem::path& path, const std::vector<std::string>& overrides);

nlohmann::json episode_config_to_json(const EpisodeConfig& c);
EpisodeConfig episode_config_from_json(const nlohmann::json& j);

ModelConfig model_config_for(const ExperimentConfig& c, const SceneGraphDataset& ds);

struct TrainObserver {
    std::function<void(std::uint64_t step, const LossReport&)> on_step;
};

// Episodic training loop; checkpoints to `checkpoint` when given. Continues from
// `resume` state when provided.
Model run_training(const ExperimentConfig& cfg, const SceneGraphDataset& ds, const SplitSpec& split,
                   const ModelConfig& model_cfg, const TrainObserver& observer = {},
                   const std::optional<std::filesystem::path>& checkpoint = std::nullopt,
                   std::optional<LoadedCheckpoint> resume = std::nullopt);

// Entry point of the `fsrel` binary; returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Exit codes of the command surface.
inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitData = 4;

}  // namespace fsrel::cli
