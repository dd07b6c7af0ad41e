import json

import pytest

from multimodal_fewshot.cli import main
from multimodal_fewshot.pipeline import ExperimentConfig


def write_config(tmp_path, out_dir, **overrides):
    raw = {
        "seed": 321,
        "out": str(out_dir),
        "data": {
            "n_per_class": 20, "noise": 0.25, "frame_dim": 5, "split": [0.6, 0.15, 0.25],
            "background": {"speech_classes": 4, "image_classes": 3, "n_per_class": 10, "noise": 0.25},
        },
        "arms": ["dtw_pixels", "mtriplet"],
        "mining": {"metric": "transfer", "k_sample": 20},
        "grid": {"batch_sizes": [16], "seeds": [0]},
        "episodes": {"count": 4, "K": 2, "queries": 6},
        "training": {"max_epochs": 2, "patience": 1},
        "classifier": {"max_epochs": 2, "patience": 1},
        "architecture": {"hidden": 12, "depth": 1, "latent_dim": 8},
    }
    for key, value in overrides.items():
        raw[key] = value
    path = tmp_path / "config.json"
    path.write_text(json.dumps(raw))
    return path


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    out = tmp / "run"
    cfg = write_config(tmp, out)
    for command in ("prepare", "mine", "train", "evaluate", "report"):
        assert main([command, "--config", str(cfg)]) == 0
    return tmp, out, cfg


def test_pipeline_outputs_exist(finished_run):
    _, out, _ = finished_run
    assert (out / "data" / "speech_train.mfca").exists()
    assert (out / "data" / "images_test.idx").exists()
    assert (out / "classifiers" / "speech.ckpt").exists()
    assert (out / "mining" / "pairs_train.tsv").exists()
    assert (out / "checkpoints" / "mtriplet" / "bs16_s0.ckpt").exists()
    assert (out / "report" / "summary.json").exists()
    summary = json.loads((out / "report" / "summary.json").read_text())
    assert set(summary["arms"]) == {"dtw_pixels", "mtriplet_direct", "mtriplet_indirect"}
    assert summary["master_seed"] == 321


def test_metric_descriptor_written(finished_run):
    _, out, _ = finished_run
    meta = json.loads((out / "mining" / "pairs_train.tsv.meta.json").read_text())
    assert meta["metric"] == "transfer"


def test_rerun_is_noop_with_identical_outputs(finished_run):
    _, out, cfg = finished_run
    tracked = [
        out / "report" / "summary.json",
        out / "mining" / "pairs_train.tsv",
        out / "data" / "splits.json",
    ]
    before = [p.read_bytes() for p in tracked]
    for command in ("prepare", "mine", "train", "evaluate", "report"):
        assert main([command, "--config", str(cfg)]) == 0
    after = [p.read_bytes() for p in tracked]
    assert before == after


def test_missing_stage_errors(tmp_path, capsys):
    cfg = write_config(tmp_path, tmp_path / "never_ran")
    code = main(["train", "--config", str(cfg)])
    err = capsys.readouterr().err
    assert code != 0
    assert err.startswith("error:")
    assert err.strip().count("\n") == 0  # single line


def test_bad_config_path_errors(tmp_path, capsys):
    code = main(["prepare", "--config", str(tmp_path / "missing.json")])
    assert code != 0
    assert capsys.readouterr().err.startswith("error:")


def test_invalid_arm_named_in_error(tmp_path, capsys):
    cfg = write_config(tmp_path, tmp_path / "x", arms=["warp_drive"])
    code = main(["prepare", "--config", str(cfg)])
    err = capsys.readouterr().err
    assert code != 0 and "warp_drive" in err


def test_grid_and_seed_overrides(tmp_path):
    cfg_path = write_config(tmp_path, tmp_path / "y")
    raw = json.loads(cfg_path.read_text())
    base = ExperimentConfig.from_dict(raw)
    assert base.batch_sizes == (16,)

    import multimodal_fewshot.cli as cli

    class Args:
        config = str(cfg_path)
        seed = 999
        out = str(tmp_path / "z")
        arm = ["dtw_pixels,mcae"]
        grid = "16,32:0,1"

    cfg = cli._build_config(Args)
    assert cfg.seed == 999
    assert cfg.arms == ("dtw_pixels", "mcae")
    assert cfg.batch_sizes == (16, 32) and cfg.grid_seeds == (0, 1)
    assert cfg.out.endswith("z")


def test_bad_grid_override(tmp_path, capsys):
    cfg = write_config(tmp_path, tmp_path / "w")
    code = main(["prepare", "--config", str(cfg), "--grid", "16;0"])
    assert code != 0
    assert capsys.readouterr().err.startswith("error:")
