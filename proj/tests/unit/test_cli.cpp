#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "json.hpp"

#include "fsrel/cli.hpp"
#include "fsrel/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fsrel;

namespace {

json tiny_config() {
    return json::parse(R"({
      "world": {"num_categories": 8, "num_groups": 4, "num_predicates": 6, "appearance_dim": 6,
                "num_images": 80, "test_fraction": 0.4, "modes_per_predicate": [1, 1, 2, 1, 2, 2]},
      "split": {"n_base": 4, "n_novel": 2},
      "model": {"d_app": 6, "d_vis": 6, "d_ctx": 5, "d_txt": 4, "d_proto": 3, "d_final": 5,
                "hidden": 6, "text_hidden": 5, "prompt_length": 3},
      "train": {"steps": 6},
      "eval": {"shots": 3, "recall_k": [5, 20]}
    })");
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

struct Workdir {
    fs::path dir;
    explicit Workdir(const std::string& name, const json& cfg = tiny_config()) {
        dir = fs::temp_directory_path() / ("fsrel_cli_" + name);
        fs::remove_all(dir);
        fs::create_directories(dir);
        std::ofstream(dir / "config.json") << cfg.dump(2);
    }
    ~Workdir() { fs::remove_all(dir); }

    int run(const std::string& cmd, std::vector<std::string> extra = {}) {
        std::vector<std::string> args{cmd, "--config", (dir / "config.json").string(), "--out", dir.string()};
        args.insert(args.end(), extra.begin(), extra.end());
        out.str("");
        err.str("");
        return cli::run(args, out, err);
    }
    int pipeline() {
        for (const char* c : {"gen-data", "split", "support", "train", "eval"})
            if (int rc = run(c); rc != 0) return rc;
        return 0;
    }
    std::ostringstream out, err;
};

std::size_t count_lines(const fs::path& p) {
    std::ifstream f(p);
    std::size_t n = 0;
    for (std::string line; std::getline(f, line);)
        if (!line.empty()) ++n;
    return n;
}

}  // namespace

TEST_CASE("full pipeline writes its artifacts and one log line per step") {
    Workdir w("pipeline");
    REQUIRE(w.pipeline() == cli::kExitOk);
    for (const char* f : {"dataset.json", "world_meta.json", "split.json", "support_K3.json", "checkpoint.bin",
                          "train_log.jsonl", "report_K3.json"})
        CHECK(fs::exists(w.dir / f));
    CHECK(count_lines(w.dir / "train_log.jsonl") == 6);

    const json report = json::parse(slurp(w.dir / "report_K3.json"));
    for (const char* part : {"base", "novel"})
        for (const char* k : {"mR@5", "mR@20"}) CHECK(report[part].contains(k));
    for (const char* cmd : {"gen-data", "split", "support", "train", "eval"}) {
        const json m = json::parse(slurp(w.dir / (std::string("manifest_") + cmd + ".json")));
        CHECK(m["command"] == cmd);
        CHECK(m["config"]["train"]["steps"] == 6);
        CHECK(m["config_hash"].get<std::string>().size() == 16);
        CHECK(!m["outputs"].empty());
        if (std::string(cmd) != "gen-data") CHECK(m.contains("dataset_hash"));
    }
}

TEST_CASE("reruns with the same seeds are byte-identical") {
    Workdir a("rerun_a"), b("rerun_b");
    REQUIRE(a.pipeline() == 0);
    REQUIRE(b.pipeline() == 0);
    for (const char* f : {"dataset.json", "split.json", "support_K3.json", "checkpoint.bin", "report_K3.json"})
        CHECK_MESSAGE(slurp(a.dir / f) == slurp(b.dir / f), f);
    // a different training seed changes the weights
    REQUIRE(b.run("train", {"--set", "seeds.train_seed=99"}) == 0);
    CHECK(slurp(a.dir / "checkpoint.bin") != slurp(b.dir / "checkpoint.bin"));
}

TEST_CASE("resuming from a checkpoint reproduces an uninterrupted run") {
    Workdir a("resume_a"), b("resume_b");
    for (auto* w : {&a, &b})
        for (const char* c : {"gen-data", "split"}) REQUIRE(w->run(c) == 0);
    REQUIRE(a.run("train") == 0);
    REQUIRE(b.run("train", {"--set", "train.steps=3"}) == 0);
    REQUIRE(b.run("train", {"--set", "train.resume=true"}) == 0);
    CHECK(count_lines(b.dir / "train_log.jsonl") == 6);
    CHECK(slurp(a.dir / "train_log.jsonl") == slurp(b.dir / "train_log.jsonl"));
    CHECK(slurp(a.dir / "checkpoint.bin") == slurp(b.dir / "checkpoint.bin"));
}

TEST_CASE("config errors exit with code 2") {
    Workdir w("config");
    CHECK(w.run("gen-data", {"--set", "model.no_such_field=1"}) == cli::kExitConfig);
    CHECK(w.run("gen-data", {"--set", "split.n_base=-1"}) == cli::kExitConfig);
    CHECK(cli::run({"train"}, w.out, w.err) == cli::kExitConfig);
    CHECK(cli::run({"bogus-command"}, w.out, w.err) == cli::kExitConfig);

    json bad = tiny_config();
    bad["model"]["dimension"] = 3;
    std::ofstream(w.dir / "config.json") << bad.dump();
    CHECK(w.run("gen-data") == cli::kExitConfig);
    std::ofstream(w.dir / "config.json") << "{ not json";
    CHECK(w.run("gen-data") == cli::kExitConfig);
}

TEST_CASE("model dimension mismatch against a checkpoint is refused unless overridden") {
    Workdir w("mismatch");
    REQUIRE(w.pipeline() == 0);
    CHECK(w.run("eval", {"--set", "model.d_txt=7"}) == cli::kExitConfig);
    CHECK(w.run("eval", {"--set", "model.kl_loss=false"}) == cli::kExitConfig);
    CHECK(w.run("eval", {"--set", "model.kl_loss=false", "--set", "allow_config_mismatch=true"}) == cli::kExitOk);
}

TEST_CASE("data integrity errors exit with code 4") {
    Workdir w("data");
    REQUIRE(w.run("gen-data") == 0);
    json ds = json::parse(slurp(w.dir / "dataset.json"));
    ds["images"][0]["relations"].push_back({{"subject", 9999}, {"object", 0}, {"predicate", ds["predicates"][0]}});
    std::ofstream(w.dir / "dataset.json") << ds.dump();
    CHECK(w.run("split") == cli::kExitData);
    std::ofstream(w.dir / "dataset.json") << "[1, 2";
    CHECK(w.run("split") == cli::kExitData);
}

TEST_CASE("a diverging run aborts with code 3 and a diagnostic episode") {
    Workdir w("nan");
    for (const char* c : {"gen-data", "split"}) REQUIRE(w.run(c) == 0);
    CHECK(w.run("train", {"--set", "optimizer.lr=1e300", "--set", "train.steps=20"}) == cli::kExitNumerical);
    REQUIRE(fs::exists(w.dir / "nan_episode.json"));
    const json ep = json::parse(slurp(w.dir / "nan_episode.json"));
    CHECK(!ep.empty());
}

TEST_CASE("config normalization is a fixpoint and overrides apply") {
    const cli::ExperimentConfig c = cli::experiment_config_from_json(tiny_config());
    const json norm = cli::experiment_config_to_json(c);
    CHECK(cli::experiment_config_to_json(cli::experiment_config_from_json(norm)) == norm);
    CHECK(norm["world"]["num_images"] == 80);
    CHECK(norm["optimizer"]["lr"] == 1e-3);

    json j = norm;
    cli::apply_override(j, "model.d_txt=32");
    cli::apply_override(j, "eval.task=SGCls");
    cli::apply_override(j, "eval.recall_k=[1,2]");
    const auto o = cli::experiment_config_from_json(j);
    CHECK(o.model.d_txt == 32);
    CHECK(o.eval.task == Task::SGCls);
    CHECK(o.eval.recall_k == std::vector<int>{1, 2});
    CHECK_THROWS_AS(cli::apply_override(j, "model.nope=1"), ConfigError);
    CHECK_THROWS_AS(cli::apply_override(j, "missing_equals"), ConfigError);
    j["model"]["metric"] = "median";
    CHECK_THROWS_AS(cli::experiment_config_from_json(j), ConfigError);
}

TEST_CASE("ablation trains exactly the four variants plus the baseline") {
    json cfg = tiny_config();
    cfg["train"]["steps"] = 3;
    Workdir w("ablate", cfg);
    for (const char* c : {"gen-data", "split", "support"}) REQUIRE(w.run(c) == 0);
    REQUIRE(w.run("ablate") == 0);
    const json t = json::parse(slurp(w.dir / "ablation_K3.json"));
    REQUIRE(t["variants"].size() == 4);
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& row : t["variants"]) {
        seen.insert({row["prompt"].get<std::string>(), row["metric"].get<std::string>()});
        CHECK(row["novel"].contains("mR@5"));
    }
    CHECK(seen == std::set<std::pair<std::string, std::string>>{
                      {"fixed", "average"}, {"fixed", "reweight"}, {"learnable", "average"}, {"learnable", "reweight"}});
    CHECK(t["baseline"]["prompt"] == "none");
    CHECK(t["baseline"]["metric"] == "average");
    CHECK(t["steps"] == 3);
}

TEST_CASE("weights dump: K normalized weights that match a softmax oracle") {
    Workdir w("weights");
    REQUIRE(w.pipeline() == 0);
    REQUIRE(w.run("weights-dump") == 0);
    std::ifstream f(w.dir / "weights_K3.jsonl");
    int lines = 0;
    for (std::string line; std::getline(f, line);) {
        if (line.empty()) continue;
        ++lines;
        const json l = json::parse(line);
        REQUIRE(l["weights"].size() == 3);
        double sum = 0, z = 0;
        for (const auto& e : l["weights"]) {
            sum += e["w"].get<double>();
            z += std::exp(e["e_s"].get<double>() * e["e_o"].get<double>());
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
        for (const auto& e : l["weights"])
            CHECK(e["w"].get<double>() ==
                  doctest::Approx(std::exp(e["e_s"].get<double>() * e["e_o"].get<double>()) / z));
    }
    CHECK(lines > 0);
}

TEST_CASE("weights dump: a query labelled like one support puts the most weight on it") {
    Workdir w("weights_match");
    REQUIRE(w.pipeline() == 0);
    // use each support triplet itself as the query
    const json sup = json::parse(slurp(w.dir / "support_K3.json"));
    const json ds = json::parse(slurp(w.dir / "dataset.json"));
    json queries = json::array();
    std::vector<int> target;
    for (const auto& [pred, refs] : sup["entries"].items()) {
        for (std::size_t j = 0; j < refs.size(); ++j) {
            json rel;
            for (const auto& img : ds["images"])
                if (img["id"] == refs[j]["image"]) rel = img["relations"][refs[j]["triplet"].get<int>()];
            queries.push_back(
                {{"image", refs[j]["image"]}, {"subject", rel["subject"]}, {"object", rel["object"]}, {"predicate", pred}});
            target.push_back(static_cast<int>(j));
        }
    }
    REQUIRE(!queries.empty());
    json cfg = tiny_config();
    cfg["weights_dump"]["queries"] = queries;
    std::ofstream(w.dir / "config.json") << cfg.dump();
    REQUIRE(w.run("weights-dump") == 0);
    std::ifstream f(w.dir / "weights_K3.jsonl");
    std::size_t i = 0;
    for (std::string line; std::getline(f, line); ++i) {
        const json l = json::parse(line);
        const auto& ws = l["weights"];
        const auto& mine = ws[target[i]];
        CHECK(mine["subject_label"] == l["query"]["subject_label"]);
        CHECK(mine["e_s"].get<double>() == doctest::Approx(1.0));
        CHECK(mine["e_o"].get<double>() == doctest::Approx(1.0));
        for (const auto& e : ws) {
            CHECK(mine["w"].get<double>() >= e["w"].get<double>() - 1e-12);
            const bool disjoint = e["subject_label"] != mine["subject_label"] && e["object_label"] != mine["object_label"];
            if (disjoint) CHECK(mine["w"].get<double>() > e["w"].get<double>());
        }
    }
    CHECK(i == queries.size());
}
