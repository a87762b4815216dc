#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

namespace fsrel {

enum class MetricMode { Average, Reweight };
// None removes the prototype module entirely (f_pro = 0, no KL term).
enum class PromptMode { Learnable, Fixed, None };
enum class Task { PredCls, SGCls };

std::string to_string(MetricMode m);
std::string to_string(PromptMode m);
std::string to_string(Task t);
MetricMode metric_mode_from_string(const std::string& s);
PromptMode prompt_mode_from_string(const std::string& s);
Task task_from_string(const std::string& s);

struct ModelConfig {
    int d_app = 32;
    int d_vis = 128;
    int d_ctx = 128;
    int d_txt = 64;
    int d_proto = 64;
    int d_final = 128;
    int prompt_length = 24;
    int hidden = 128;
    int text_hidden = 64;
    int num_categories = 0;
    int num_predicates = 0;
    MetricMode metric = MetricMode::Reweight;
    PromptMode prompt = PromptMode::Learnable;
    bool freeze_text_encoder = true;
    bool text_standardize = true;  // standardize pooled tokens before the text MLP
    bool kl_loss = true;
    bool obj_loss = true;
    double word_init_std = 0.02;
    double prompt_init_std = 0.02;
    // Initial value of the learnable background pseudo-distance.
    double init_bg_distance = 8.0;

    void validate() const;
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);
// FNV-1a of the canonical JSON form.
std::uint64_t config_hash(const ModelConfig& c);

}  // namespace fsrel
