#include "fsrel/cli.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"

#include "fsrel/errors.hpp"
#include "fsrel/hash.hpp"

namespace fsrel::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, const char* block, std::initializer_list<const char*> keys) {
    if (!j.is_object()) throw ConfigError(std::string(block) + ": expected an object");
    const std::set<std::string> known(keys.begin(), keys.end());
    for (const auto& [k, _] : j.items())
        if (!known.count(k)) throw ConfigError(std::string(block) + ": unknown key '" + k + "'");
}

template <class T>
T get(const json& j, const char* block, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string(block) + "." + key + ": wrong type");
    }
}

std::uint64_t get_seed(const json& j, const char* key, std::uint64_t fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
        throw ConfigError(std::string("seeds.") + key + ": expected a non-negative integer");
    return v.get<std::uint64_t>();
}

std::string read_text(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw Error("cannot read " + p.string());
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + p.string());
    f << text;
    if (!f) throw Error("failed writing " + p.string());
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

json read_json(const fs::path& p) {
    try {
        return json::parse(read_text(p));
    } catch (const json::parse_error& e) {
        throw ParseError(p.string() + ": " + e.what());
    }
}

std::string hex64(std::uint64_t v) {
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << v;
    return s.str();
}

std::string now_iso() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

}  // namespace

json episode_config_to_json(const EpisodeConfig& c) {
    return {{"categories_per_batch", c.categories_per_batch}, {"support_min", c.support_min},
            {"support_max", c.support_max},                   {"query_min", c.query_min},
            {"query_max", c.query_max},                       {"background_ratio", c.background_ratio},
            {"max_retries", c.max_retries}};
}

EpisodeConfig episode_config_from_json(const json& j) {
    check_keys(j, "episode",
               {"categories_per_batch", "support_min", "support_max", "query_min", "query_max", "background_ratio",
                "max_retries"});
    EpisodeConfig c;
    c.categories_per_batch = get(j, "episode", "categories_per_batch", c.categories_per_batch);
    c.support_min = get(j, "episode", "support_min", c.support_min);
    c.support_max = get(j, "episode", "support_max", c.support_max);
    c.query_min = get(j, "episode", "query_min", c.query_min);
    c.query_max = get(j, "episode", "query_max", c.query_max);
    c.background_ratio = get(j, "episode", "background_ratio", c.background_ratio);
    c.max_retries = get(j, "episode", "max_retries", c.max_retries);
    if (c.categories_per_batch < 1 || c.support_min < 1 || c.support_max < c.support_min || c.query_min < 1 ||
        c.query_max < c.query_min || c.background_ratio < 0 || c.max_retries < 1)
        throw ConfigError("episode: inconsistent sizes");
    return c;
}

json experiment_config_to_json(const ExperimentConfig& c) {
    json model = model_config_to_json(c.model);
    model.erase("num_categories");
    model.erase("num_predicates");
    return {{"dataset", c.dataset},
            {"world", world_config_to_json(c.world)},
            {"split", {{"n_base", c.n_base}, {"n_novel", c.n_novel}}},
            {"episode", episode_config_to_json(c.episode)},
            {"model", model},
            {"optimizer",
             {{"lr", c.optimizer.lr}, {"beta1", c.optimizer.beta1}, {"beta2", c.optimizer.beta2},
              {"eps", c.optimizer.eps}}},
            {"train",
             {{"steps", c.train.steps}, {"checkpoint_every", c.train.checkpoint_every}, {"resume", c.train.resume}}},
            {"eval",
             {{"shots", c.eval.shots},
              {"recall_k", c.eval.recall_k},
              {"task", to_string(c.eval.task)},
              {"dump_predictions", c.eval.dump_predictions}}},
            {"weights_dump",
             {{"predicate", c.weights_dump.predicate},
              {"max_queries", c.weights_dump.max_queries},
              {"queries", c.weights_dump.queries}}},
            {"allow_config_mismatch", c.allow_config_mismatch},
            {"seeds",
             {{"data_seed", c.seeds.data_seed},
              {"split_seed", c.seeds.split_seed},
              {"support_seed", c.seeds.support_seed},
              {"train_seed", c.seeds.train_seed},
              {"eval_seed", c.seeds.eval_seed}}}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
    check_keys(j, "config",
               {"dataset", "world", "split", "episode", "model", "optimizer", "train", "eval", "weights_dump",
                "allow_config_mismatch", "seeds"});
    ExperimentConfig c;
    c.dataset = get<std::string>(j, "config", "dataset", "");
    if (j.contains("world")) c.world = world_config_from_json(j["world"]);
    if (j.contains("split")) {
        const auto& s = j["split"];
        check_keys(s, "split", {"n_base", "n_novel"});
        c.n_base = get(s, "split", "n_base", c.n_base);
        c.n_novel = get(s, "split", "n_novel", c.n_novel);
        if (c.n_base < 1 || c.n_novel < 0) throw ConfigError("split: n_base must be >= 1 and n_novel >= 0");
    }
    if (j.contains("episode")) c.episode = episode_config_from_json(j["episode"]);
    if (j.contains("model")) {
        const auto& m = j["model"];
        if (m.is_object() && (m.contains("num_categories") || m.contains("num_predicates")))
            throw ConfigError("model: vocabulary sizes come from the dataset");
        c.model = model_config_from_json(m);
    }
    c.model.num_categories = 1;
    c.model.num_predicates = 1;
    c.model.validate();
    if (j.contains("optimizer")) {
        const auto& o = j["optimizer"];
        check_keys(o, "optimizer", {"lr", "beta1", "beta2", "eps"});
        c.optimizer.lr = get(o, "optimizer", "lr", c.optimizer.lr);
        c.optimizer.beta1 = get(o, "optimizer", "beta1", c.optimizer.beta1);
        c.optimizer.beta2 = get(o, "optimizer", "beta2", c.optimizer.beta2);
        c.optimizer.eps = get(o, "optimizer", "eps", c.optimizer.eps);
        if (!(c.optimizer.lr >= 0) || !(c.optimizer.beta1 >= 0 && c.optimizer.beta1 < 1) ||
            !(c.optimizer.beta2 >= 0 && c.optimizer.beta2 < 1) || !(c.optimizer.eps > 0))
            throw ConfigError("optimizer: invalid hyperparameters");
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        check_keys(t, "train", {"steps", "checkpoint_every", "resume"});
        c.train.steps = get(t, "train", "steps", c.train.steps);
        c.train.checkpoint_every = get(t, "train", "checkpoint_every", c.train.checkpoint_every);
        c.train.resume = get(t, "train", "resume", c.train.resume);
        if (c.train.steps < 0 || c.train.checkpoint_every < 0) throw ConfigError("train: counts must be >= 0");
    }
    if (j.contains("eval")) {
        const auto& e = j["eval"];
        check_keys(e, "eval", {"shots", "recall_k", "task", "dump_predictions"});
        c.eval.shots = get(e, "eval", "shots", c.eval.shots);
        c.eval.recall_k = get(e, "eval", "recall_k", c.eval.recall_k);
        c.eval.task = task_from_string(get<std::string>(e, "eval", "task", to_string(c.eval.task)));
        c.eval.dump_predictions = get(e, "eval", "dump_predictions", c.eval.dump_predictions);
        if (c.eval.shots < 1) throw ConfigError("eval.shots must be >= 1");
        if (c.eval.recall_k.empty()) throw ConfigError("eval.recall_k must not be empty");
        for (int k : c.eval.recall_k)
            if (k < 1) throw ConfigError("eval.recall_k entries must be >= 1");
    }
    if (j.contains("weights_dump")) {
        const auto& w = j["weights_dump"];
        check_keys(w, "weights_dump", {"predicate", "max_queries", "queries"});
        c.weights_dump.predicate = get<std::string>(w, "weights_dump", "predicate", "");
        c.weights_dump.max_queries = get(w, "weights_dump", "max_queries", c.weights_dump.max_queries);
        if (w.contains("queries")) {
            if (!w["queries"].is_array()) throw ConfigError("weights_dump.queries: expected an array");
            c.weights_dump.queries = w["queries"];
        }
        if (c.weights_dump.max_queries < 0) throw ConfigError("weights_dump.max_queries must be >= 0");
    }
    c.allow_config_mismatch = get(j, "config", "allow_config_mismatch", c.allow_config_mismatch);
    if (j.contains("seeds")) {
        const auto& s = j["seeds"];
        check_keys(s, "seeds", {"data_seed", "split_seed", "support_seed", "train_seed", "eval_seed"});
        c.seeds.data_seed = get_seed(s, "data_seed", c.seeds.data_seed);
        c.seeds.split_seed = get_seed(s, "split_seed", c.seeds.split_seed);
        c.seeds.support_seed = get_seed(s, "support_seed", c.seeds.support_seed);
        c.seeds.train_seed = get_seed(s, "train_seed", c.seeds.train_seed);
        c.seeds.eval_seed = get_seed(s, "eval_seed", c.seeds.eval_seed);
    }
    return c;
}

void apply_override(json& normalized, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;
    }
    json* node = &normalized;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!node->is_object() || !node->contains(key)) throw ConfigError("--set: unknown key '" + path + "'");
        node = &(*node)[key];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    *node = std::move(value);
}

ExperimentConfig load_experiment_config(const fs::path& path, const std::vector<std::string>& overrides) {
    json doc;
    try {
        doc = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    json normalized = experiment_config_to_json(experiment_config_from_json(doc));
    for (const auto& o : overrides) apply_override(normalized, o);
    return experiment_config_from_json(normalized);
}

ModelConfig model_config_for(const ExperimentConfig& c, const SceneGraphDataset& ds) {
    ModelConfig m = c.model;
    m.num_categories = static_cast<int>(ds.categories.size());
    m.num_predicates = static_cast<int>(ds.predicates.size());
    if (m.d_app != ds.appearance_dim)
        throw ConfigError("model.d_app = " + std::to_string(m.d_app) + " but the dataset has appearance dim " +
                          std::to_string(ds.appearance_dim));
    m.validate();
    return m;
}

Model run_training(const ExperimentConfig& cfg, const SceneGraphDataset& ds, const SplitSpec& split,
                   const ModelConfig& model_cfg, const TrainObserver& observer,
                   const std::optional<fs::path>& checkpoint, std::optional<LoadedCheckpoint> resume) {
    Model model = resume ? std::move(resume->model) : Model(model_cfg, mix_seed({cfg.seeds.train_seed, 0}));
    Adam adam(model.params(), cfg.optimizer);
    Rng rng(mix_seed({cfg.seeds.train_seed, 1}));
    std::uint64_t step = 0;
    if (resume) {
        step = resume->state.step;
        if (resume->state.optimizer) adam.set_state(*resume->state.optimizer);
        std::istringstream s(resume->state.rng_state);
        s >> rng;
        if (!s) throw IntegrityError("checkpoint: unreadable rng state");
    }
    const auto save = [&]() {
        if (!checkpoint) return;
        std::ostringstream s;
        s << rng;
        save_checkpoint(model, {step, adam.state(), s.str()}, *checkpoint);
    };
    const auto target = static_cast<std::uint64_t>(cfg.train.steps);
    while (step < target) {
        const Episode ep = sample_episode(ds, split, cfg.episode, rng);
        const LossReport r = train_step(ep, model, adam, ds, split);
        ++step;
        if (observer.on_step) observer.on_step(step, r);
        if (cfg.train.checkpoint_every > 0 && step % static_cast<std::uint64_t>(cfg.train.checkpoint_every) == 0 &&
            step < target)
            save();
    }
    save();
    return model;
}

// ---- commands ---------------------------------------------------------------------

namespace {

struct Context {
    ExperimentConfig cfg;
    json normalized;
    fs::path out;
    std::optional<fs::path> checkpoint;
    std::ostream* log = nullptr;
    std::ostream* err = nullptr;
    std::string command;
    std::string started;
    std::vector<std::string> outputs;

    fs::path dataset_path() const { return cfg.dataset.empty() ? out / "dataset.json" : fs::path(cfg.dataset); }
    fs::path checkpoint_path() const { return checkpoint ? *checkpoint : out / "checkpoint.bin"; }
    fs::path support_path(int shots) const { return out / ("support_K" + std::to_string(shots) + ".json"); }

    void wrote(const fs::path& p) { outputs.push_back(p.string()); }
};

SceneGraphDataset load_data(const Context& ctx) { return load_dataset(ctx.dataset_path()); }

SplitSpec load_split(const Context& ctx, const SceneGraphDataset& ds) {
    return split_from_json(ds, read_json(ctx.out / "split.json"));
}

void write_manifest(Context& ctx) {
    json m;
    m["command"] = ctx.command;
    m["config_hash"] = hex64(fnv1a(ctx.normalized.dump()));
    const fs::path data = ctx.dataset_path();
    m["dataset_hash"] = fs::exists(data) ? json(hex64(fnv1a(read_text(data)))) : json(nullptr);
    m["start_time"] = ctx.started;
    m["end_time"] = now_iso();
    m["outputs"] = ctx.outputs;
    m["config"] = ctx.normalized;
    write_json(ctx.out / ("manifest_" + ctx.command + ".json"), m);
}

void cmd_gen_data(Context& ctx) {
    const auto world = generate_synthetic_world(ctx.cfg.world, ctx.cfg.seeds.data_seed);
    const fs::path data = ctx.dataset_path();
    save_dataset(world.dataset, data);
    ctx.wrote(data);
    const fs::path meta = ctx.out / "world_meta.json";
    write_json(meta, world_metadata_to_json(world.metadata));
    ctx.wrote(meta);
}

void cmd_split(Context& ctx) {
    const auto ds = load_data(ctx);
    const auto split = make_split(ds, ctx.cfg.n_base, ctx.cfg.n_novel, ctx.cfg.seeds.split_seed);
    const fs::path p = ctx.out / "split.json";
    write_json(p, split_to_json(ds, split));
    ctx.wrote(p);
}

void cmd_support(Context& ctx) {
    const auto ds = load_data(ctx);
    const auto split = load_split(ctx, ds);
    const auto index = sample_support_sets(ds, split, ctx.cfg.eval.shots, ctx.cfg.seeds.support_seed);
    for (const auto& w : index.warnings) *ctx.err << "warning: " << w << "\n";
    const fs::path p = ctx.support_path(ctx.cfg.eval.shots);
    write_json(p, support_to_json(ds, index));
    ctx.wrote(p);
}

void cmd_train(Context& ctx) {
    const auto ds = load_data(ctx);
    const auto split = load_split(ctx, ds);
    const ModelConfig mc = model_config_for(ctx.cfg, ds);
    const fs::path ckpt = ctx.checkpoint_path();
    const fs::path log_path = ctx.out / "train_log.jsonl";
    std::optional<LoadedCheckpoint> resume;
    if (ctx.cfg.train.resume && fs::exists(ckpt)) resume = load_checkpoint(ckpt, &mc, ctx.cfg.allow_config_mismatch);
    std::ofstream log(log_path, resume ? std::ios::app : std::ios::trunc);
    if (!log) throw Error("cannot write " + log_path.string());
    TrainObserver obs;
    obs.on_step = [&](std::uint64_t step, const LossReport& r) {
        json line = loss_report_to_json(step, r);
        log << line.dump() << "\n";
    };
    try {
        run_training(ctx.cfg, ds, split, mc, obs, ckpt, std::move(resume));
    } catch (const NonFiniteLossError& e) {
        const fs::path dump = ctx.out / "nan_episode.json";
        write_json(dump, episode_to_json(ds, e.episode));
        *ctx.err << "diagnostic episode written to " << dump.string() << "\n";
        throw;
    }
    ctx.wrote(ckpt);
    ctx.wrote(log_path);
}

json report_for(const ExperimentConfig& cfg, const SceneGraphDataset& ds, const SplitSpec& split,
                const SupportIndex& supports, const Model& model, std::vector<TripletPrediction>* preds) {
    EvaluateOptions opt;
    opt.k_list = cfg.eval.recall_k;
    opt.predictions_out = preds;
    return eval_report_to_json(ds, evaluate(ds, split, supports, model, cfg.eval.task, opt));
}

void cmd_eval(Context& ctx) {
    const auto ds = load_data(ctx);
    const auto split = load_split(ctx, ds);
    const auto supports = support_from_json(ds, read_json(ctx.support_path(ctx.cfg.eval.shots)));
    const ModelConfig mc = model_config_for(ctx.cfg, ds);
    const auto loaded = load_checkpoint(ctx.checkpoint_path(), &mc, ctx.cfg.allow_config_mismatch);
    std::vector<TripletPrediction> preds;
    const json report = report_for(ctx.cfg, ds, split, supports, loaded.model,
                                   ctx.cfg.eval.dump_predictions ? &preds : nullptr);
    const std::string tag = "K" + std::to_string(ctx.cfg.eval.shots);
    const fs::path p = ctx.out / ("report_" + tag + ".json");
    write_json(p, report);
    ctx.wrote(p);
    if (ctx.cfg.eval.dump_predictions) {
        std::ostringstream s;
        for (const auto& pr : preds) s << prediction_to_json(ds, pr).dump() << "\n";
        const fs::path pp = ctx.out / ("predictions_" + tag + ".jsonl");
        write_text(pp, s.str());
        ctx.wrote(pp);
    }
    *ctx.log << report.dump(2) << "\n";
}

void cmd_ablate(Context& ctx) {
    const auto ds = load_data(ctx);
    const auto split = load_split(ctx, ds);
    const auto supports = support_from_json(ds, read_json(ctx.support_path(ctx.cfg.eval.shots)));
    struct Variant {
        PromptMode prompt;
        MetricMode metric;
    };
    const auto run_variant = [&](const Variant& v) {
        ExperimentConfig c = ctx.cfg;
        c.model.prompt = v.prompt;
        c.model.metric = v.metric;
        const Model model = run_training(c, ds, split, model_config_for(c, ds));
        json report = report_for(c, ds, split, supports, model, nullptr);
        json row = {{"prompt", to_string(v.prompt)}, {"metric", to_string(v.metric)}};
        row["base"] = report["base"];
        row["novel"] = report["novel"];
        const fs::path p = ctx.out / ("report_ablate_" + to_string(v.prompt) + "_" + to_string(v.metric) + "_K" +
                                      std::to_string(c.eval.shots) + ".json");
        write_json(p, report);
        ctx.wrote(p);
        return row;
    };
    json table;
    table["K"] = ctx.cfg.eval.shots;
    table["task"] = to_string(ctx.cfg.eval.task);
    table["steps"] = ctx.cfg.train.steps;
    table["variants"] = json::array();
    for (PromptMode pm : {PromptMode::Fixed, PromptMode::Learnable})
        for (MetricMode mm : {MetricMode::Average, MetricMode::Reweight})
            table["variants"].push_back(run_variant({pm, mm}));
    table["baseline"] = run_variant({PromptMode::None, MetricMode::Average});
    const fs::path p = ctx.out / ("ablation_K" + std::to_string(ctx.cfg.eval.shots) + ".json");
    write_json(p, table);
    ctx.wrote(p);

    *ctx.log << std::left << std::setw(12) << "prompt" << std::setw(10) << "metric";
    for (int k : ctx.cfg.eval.recall_k) *ctx.log << std::setw(14) << ("novel mR@" + std::to_string(k));
    *ctx.log << "\n";
    std::vector<json> rows(table["variants"].begin(), table["variants"].end());
    rows.push_back(table["baseline"]);
    for (const auto& row : rows) {
        *ctx.log << std::setw(12) << row["prompt"].get<std::string>() << std::setw(10)
                 << row["metric"].get<std::string>();
        for (int k : ctx.cfg.eval.recall_k) {
            const auto& v = row["novel"]["mR@" + std::to_string(k)];
            std::ostringstream cell;
            if (v.is_null())
                cell << "n/a";
            else
                cell << std::fixed << std::setprecision(4) << v.get<double>();
            *ctx.log << std::setw(14) << cell.str();
        }
        *ctx.log << "\n";
    }
}

void cmd_weights_dump(Context& ctx) {
    const auto ds = load_data(ctx);
    const auto split = load_split(ctx, ds);
    const auto supports = support_from_json(ds, read_json(ctx.support_path(ctx.cfg.eval.shots)));
    const ModelConfig mc = model_config_for(ctx.cfg, ds);
    const auto loaded = load_checkpoint(ctx.checkpoint_path(), &mc, ctx.cfg.allow_config_mismatch);
    const LabelEmbedder labels = loaded.model.label_embedder();

    struct QuerySpec {
        int image, subject, object;
        PredicateId predicate;
    };
    std::vector<QuerySpec> queries;
    const auto& wd = ctx.cfg.weights_dump;
    if (!wd.queries.empty()) {
        for (const auto& q : wd.queries) {
            check_keys(q, "weights_dump.queries[]", {"image", "subject", "object", "predicate"});
            const auto pred = ds.find_predicate(get<std::string>(q, "weights_dump.queries[]", "predicate", ""));
            if (!pred) throw VocabularyError("weights_dump: unknown predicate in query spec");
            const auto img = ds.image_index(get<std::string>(q, "weights_dump.queries[]", "image", ""));
            if (img < 0) throw IntegrityError("weights_dump: unknown image in query spec");
            const auto& image = ds.images[img];
            const auto s = image.object_index(get<int>(q, "weights_dump.queries[]", "subject", -1));
            const auto o = image.object_index(get<int>(q, "weights_dump.queries[]", "object", -1));
            if (s < 0 || o < 0 || s == o) throw IntegrityError("weights_dump: bad object ids in query spec");
            queries.push_back({img, s, o, *pred});
        }
    } else {
        std::vector<PredicateId> preds;
        if (!wd.predicate.empty()) {
            const auto p = ds.find_predicate(wd.predicate);
            if (!p) throw VocabularyError("weights_dump: unknown predicate '" + wd.predicate + "'");
            preds.push_back(*p);
        } else {
            for (auto p : split.novel_predicates)
                if (supports.entries.count(p)) preds.push_back(p);
        }
        for (auto p : preds) {
            const std::array<PredicateId, 1> one{p};
            auto gt = collect_ground_truth(ds, one, supports);
            Rng rng(mix_seed({ctx.cfg.seeds.eval_seed, static_cast<std::uint64_t>(p.value)}));
            std::shuffle(gt.begin(), gt.end(), rng);
            const auto n = std::min(gt.size(), static_cast<std::size_t>(wd.max_queries));
            for (std::size_t i = 0; i < n; ++i) queries.push_back({gt[i].image, gt[i].subject, gt[i].object, p});
        }
    }

    std::ostringstream s;
    for (const auto& q : queries) {
        const auto it = supports.entries.find(q.predicate);
        if (it == supports.entries.end())
            throw ProtocolError("weights_dump: no support set for '" + ds.predicate_name(q.predicate) + "'");
        const auto& image = ds.images[q.image];
        const LabelPair ql{image.objects[q.subject].category, image.objects[q.object].category};
        std::vector<LabelPair> sl;
        for (const auto& ref : it->second) {
            const auto sp = support_labels(ds, ref);
            sl.emplace_back(sp.subject, sp.object);
        }
        const auto w = support_weights(ql, sl, labels);
        json line;
        line["query"] = {{"image", image.id},
                         {"subject", image.objects[q.subject].id},
                         {"object", image.objects[q.object].id},
                         {"subject_label", ds.category_name(ql.first)},
                         {"object_label", ds.category_name(ql.second)}};
        line["predicate"] = ds.predicate_name(q.predicate);
        line["weights"] = json::array();
        for (std::size_t j = 0; j < w.size(); ++j) {
            const auto& ref = it->second[j];
            line["weights"].push_back({{"support", j},
                                       {"image", ds.images[ref.image].id},
                                       {"subject_label", ds.category_name(sl[j].first)},
                                       {"object_label", ds.category_name(sl[j].second)},
                                       {"e_s", w.subject_similarity[j]},
                                       {"e_o", w.object_similarity[j]},
                                       {"w", w.normalized[j]}});
        }
        s << line.dump() << "\n";
    }
    const fs::path p = ctx.out / ("weights_K" + std::to_string(ctx.cfg.eval.shots) + ".jsonl");
    write_text(p, s.str());
    ctx.wrote(p);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Few-shot scene-graph predicate classification with decomposed prototypes"};
    app.require_subcommand(1);
    std::string config_path, out_dir = ".", checkpoint;
    std::vector<std::string> sets;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"gen-data", "generate the synthetic polysemy world"},
        {"split", "rank predicates by frequency into base and novel"},
        {"support", "sample K-shot support sets from test images"},
        {"train", "episodic training on base predicates"},
        {"eval", "K-shot evaluation (mR@K on base and novel)"},
        {"ablate", "prompt x metric ablation plus the no-prototype baseline"},
        {"weights-dump", "per-support metric weights for chosen queries"}};
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", config_path, "experiment config JSON")->required();
        sub->add_option("--set", sets, "override, e.g. --set model.d_txt=32")->take_all()->allow_extra_args(false);
        sub->add_option("--out", out_dir, "output directory");
        if (name == "eval" || name == "weights-dump" || name == "train")
            sub->add_option("--checkpoint", checkpoint, "checkpoint path (default <out>/checkpoint.bin)");
    }

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    }

    Context ctx;
    ctx.command = app.get_subcommands().front()->get_name();
    ctx.out = out_dir;
    ctx.log = &out;
    ctx.err = &err;
    ctx.started = now_iso();
    if (!checkpoint.empty()) ctx.checkpoint = checkpoint;
    try {
        ctx.cfg = load_experiment_config(config_path, sets);
        ctx.normalized = experiment_config_to_json(ctx.cfg);
        fs::create_directories(ctx.out);
        if (ctx.command == "gen-data")
            cmd_gen_data(ctx);
        else if (ctx.command == "split")
            cmd_split(ctx);
        else if (ctx.command == "support")
            cmd_support(ctx);
        else if (ctx.command == "train")
            cmd_train(ctx);
        else if (ctx.command == "eval")
            cmd_eval(ctx);
        else if (ctx.command == "ablate")
            cmd_ablate(ctx);
        else
            cmd_weights_dump(ctx);
        write_manifest(ctx);
        return kExitOk;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const ParseError& e) {
        err << "parse error: " << e.what() << "\n";
        return kExitData;
    } catch (const IntegrityError& e) {
        err << "integrity error: " << e.what() << "\n";
        return kExitData;
    } catch (const VocabularyError& e) {
        err << "vocabulary error: " << e.what() << "\n";
        return kExitData;
    } catch (const ProtocolError& e) {
        err << "protocol error: " << e.what() << "\n";
        return kExitData;
    } catch (const SamplingError& e) {
        err << "sampling error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitOther;
    }
}

}  // namespace fsrel::cli
