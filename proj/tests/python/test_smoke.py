import json
import math

import pytest

import fsrel

TINY = {
    "world": {"num_categories": 8, "num_groups": 4, "num_predicates": 6, "appearance_dim": 6,
              "num_images": 60, "test_fraction": 0.4},
    "split": {"n_base": 4, "n_novel": 2},
    "model": {"d_app": 6, "d_vis": 6, "d_ctx": 5, "d_txt": 4, "d_proto": 3, "d_final": 5,
              "hidden": 6, "text_hidden": 5, "prompt_length": 3},
    "train": {"steps": 4},
    "eval": {"shots": 2, "recall_k": [5, 20]},
}


def test_support_weights_match_softmax():
    es, eo = [1.0, 0.2, -0.5], [1.0, 0.9, 0.3]
    w = fsrel.support_weights(es, eo)
    z = sum(math.exp(a * b) for a, b in zip(es, eo))
    assert w == pytest.approx([math.exp(a * b) / z for a, b in zip(es, eo)])
    assert sum(w) == pytest.approx(1.0)
    assert fsrel.reweighted_metric([3.0, 3.0, 3.0], es, eo) == pytest.approx(3.0)
    assert fsrel.average_metric([2.0, 4.0]) == 3.0


def test_empty_support_is_rejected():
    with pytest.raises(fsrel.ContractViolation):
        fsrel.average_metric([])


def test_generated_world_is_deterministic_and_valid():
    cfg = TINY["world"]
    a, meta = fsrel.generate_world(cfg, seed=3)
    b, _ = fsrel.generate_world(cfg, seed=3)
    assert a == b
    sizes = fsrel.validate_dataset(a)
    assert sizes["images"] == 60
    assert sizes["categories"] == 8
    assert len(meta["modes"]) == 6


def test_dangling_relation_is_an_integrity_error():
    ds, _ = fsrel.generate_world(TINY["world"], seed=1)
    ds["images"][0]["relations"].append({"subject": 999, "object": 0, "predicate": ds["predicates"][0]})
    with pytest.raises(fsrel.IntegrityError):
        fsrel.validate_dataset(ds)


def test_cli_pipeline(tmp_path):
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps(TINY))
    common = ["--config", str(cfg), "--out", str(tmp_path)]
    for cmd in ["gen-data", "split", "support", "train", "eval"]:
        code, out, err = fsrel.run([cmd] + common)
        assert code == fsrel.EXIT_OK, err
    report = json.loads((tmp_path / "report_K2.json").read_text())
    assert set(report["novel"]) >= {"mR@5", "mR@20"}
    assert len((tmp_path / "train_log.jsonl").read_text().splitlines()) == 4


def test_cli_config_error_code(tmp_path):
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps({"model": {"unknown": 1}}))
    code, _, err = fsrel.run(["gen-data", "--config", str(cfg), "--out", str(tmp_path)])
    assert code == fsrel.EXIT_CONFIG
    assert "unknown" in err
