#include "fsrel/model_config.hpp"

#include <set>

#include "fsrel/errors.hpp"
#include "fsrel/hash.hpp"

namespace fsrel {

using nlohmann::json;

std::string to_string(MetricMode m) { return m == MetricMode::Average ? "average" : "reweight"; }

std::string to_string(PromptMode m) {
    switch (m) {
        case PromptMode::Learnable: return "learnable";
        case PromptMode::Fixed: return "fixed";
        case PromptMode::None: return "none";
    }
    return "learnable";
}

std::string to_string(Task t) { return t == Task::PredCls ? "PredCls" : "SGCls"; }

MetricMode metric_mode_from_string(const std::string& s) {
    if (s == "average") return MetricMode::Average;
    if (s == "reweight") return MetricMode::Reweight;
    throw ConfigError("metric mode must be 'average' or 'reweight', got '" + s + "'");
}

PromptMode prompt_mode_from_string(const std::string& s) {
    if (s == "learnable") return PromptMode::Learnable;
    if (s == "fixed") return PromptMode::Fixed;
    if (s == "none") return PromptMode::None;
    throw ConfigError("prompt mode must be 'learnable', 'fixed' or 'none', got '" + s + "'");
}

Task task_from_string(const std::string& s) {
    if (s == "PredCls" || s == "predcls") return Task::PredCls;
    if (s == "SGCls" || s == "sgcls") return Task::SGCls;
    throw ConfigError("task must be 'PredCls' or 'SGCls', got '" + s + "'");
}

void ModelConfig::validate() const {
    if (d_app < 1 || d_vis < 1 || d_ctx < 1 || d_txt < 1 || d_proto < 1 || d_final < 1 || hidden < 1 ||
        text_hidden < 1)
        throw ConfigError("model dimensions must be positive");
    if (prompt_length < 1) throw ConfigError("prompt length L must be >= 1");
    if (num_categories < 1 || num_predicates < 1) throw ConfigError("model vocabulary is empty");
    if (!(word_init_std >= 0.0) || !(prompt_init_std >= 0.0)) throw ConfigError("init std must be non-negative");
}

json model_config_to_json(const ModelConfig& c) {
    return {{"d_app", c.d_app},
            {"d_vis", c.d_vis},
            {"d_ctx", c.d_ctx},
            {"d_txt", c.d_txt},
            {"d_proto", c.d_proto},
            {"d_final", c.d_final},
            {"prompt_length", c.prompt_length},
            {"hidden", c.hidden},
            {"text_hidden", c.text_hidden},
            {"num_categories", c.num_categories},
            {"num_predicates", c.num_predicates},
            {"metric", to_string(c.metric)},
            {"prompt", to_string(c.prompt)},
            {"freeze_text_encoder", c.freeze_text_encoder},
            {"text_standardize", c.text_standardize},
            {"kl_loss", c.kl_loss},
            {"obj_loss", c.obj_loss},
            {"word_init_std", c.word_init_std},
            {"prompt_init_std", c.prompt_init_std},
            {"init_bg_distance", c.init_bg_distance}};
}

ModelConfig model_config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("model: expected an object");
    static const std::set<std::string> known = {
        "d_app", "d_vis", "d_ctx", "d_txt", "d_proto", "d_final", "prompt_length", "hidden", "text_hidden",
        "num_categories", "num_predicates", "metric", "prompt", "freeze_text_encoder", "text_standardize", "kl_loss", "obj_loss",
        "word_init_std", "prompt_init_std", "init_bg_distance"};
    for (const auto& [k, _] : j.items())
        if (!known.count(k)) throw ConfigError("model: unknown key '" + k + "'");
    ModelConfig c;
    try {
        c.d_app = j.value("d_app", c.d_app);
        c.d_vis = j.value("d_vis", c.d_vis);
        c.d_ctx = j.value("d_ctx", c.d_ctx);
        c.d_txt = j.value("d_txt", c.d_txt);
        c.d_proto = j.value("d_proto", c.d_proto);
        c.d_final = j.value("d_final", c.d_final);
        c.prompt_length = j.value("prompt_length", c.prompt_length);
        c.hidden = j.value("hidden", c.hidden);
        c.text_hidden = j.value("text_hidden", c.text_hidden);
        c.num_categories = j.value("num_categories", c.num_categories);
        c.num_predicates = j.value("num_predicates", c.num_predicates);
        c.metric = metric_mode_from_string(j.value("metric", to_string(c.metric)));
        c.prompt = prompt_mode_from_string(j.value("prompt", to_string(c.prompt)));
        c.freeze_text_encoder = j.value("freeze_text_encoder", c.freeze_text_encoder);
        c.text_standardize = j.value("text_standardize", c.text_standardize);
        c.kl_loss = j.value("kl_loss", c.kl_loss);
        c.obj_loss = j.value("obj_loss", c.obj_loss);
        c.word_init_std = j.value("word_init_std", c.word_init_std);
        c.prompt_init_std = j.value("prompt_init_std", c.prompt_init_std);
        c.init_bg_distance = j.value("init_bg_distance", c.init_bg_distance);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model: ") + e.what());
    }
    return c;
}

std::uint64_t config_hash(const ModelConfig& c) { return fnv1a(model_config_to_json(c).dump()); }

}  // namespace fsrel
