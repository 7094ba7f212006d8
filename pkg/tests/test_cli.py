import json
import subprocess
import sys

import numpy as np
import pytest

from latent_triplanes import pipeline
from latent_triplanes.cli import main
from latent_triplanes.config import PROFILES, ConfigError, RunConfig, load_config
from latent_triplanes.triplane import trainable_params_per_scene

TINY = {
    "n_train": 2,
    "n_exploit": 2,
    "n_poses": 10,
    "image_side": 16,
    "latent_side": 4,
    "ae_widths": [8, 8],
    "ae_steps": 4,
    "plane_resolution": 8,
    "f_mic": 2,
    "f_mac": 3,
    "M": 2,
    "head_hidden": 8,
    "n_samples": 8,
    "rgb_rays_per_image": 16,
    "warmup_steps": 2,
    "steps": 2,
    "exploit_steps": 2,
    "finetune_steps": 2,
    "batch_size": 2,
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return str(path)


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    """Dataset + pretrained autoencoder shared by the tests that only need prerequisites."""
    root = tmp_path_factory.mktemp("run")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    for cmd in ("dataset", "pretrain-ae"):
        assert main([cmd, "--config", str(cfg), "--out", str(root / "out")]) == 0
    return cfg, root / "out"


def run(*argv):
    return main([str(a) for a in argv])


# -- configuration -------------------------------------------------------------------------------------------
def test_flags_override_file_override_defaults(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 3, "steps": 7}))
    cfg = load_config(str(path), {"seed": 9, "mode": None})
    assert cfg.seed == 9 and cfg.steps == 7 and cfg.warmup_steps == RunConfig().warmup_steps


def test_full_size_profile_values():
    cfg = RunConfig.from_dict({"profile": "full"})
    assert (cfg.n_train, cfg.image_side, cfg.latent_side, cfg.plane_resolution, cfg.M) == (500, 128, 16, 64, 50)
    assert PROFILES["desk"] == {} and RunConfig.from_dict({}).n_train == 8


@pytest.mark.parametrize(
    "bad",
    [{"nope": 1}, {"mode": "rgb"}, {"f_mic": 0, "f_mac": 0}, {"latent_side": 7}, {"t_mix": 2.0}, {"profile": "huge"}],
)
def test_invalid_configs_are_rejected(bad):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(bad)


def test_config_round_trip():
    cfg = RunConfig(seed=4, mode="ours-macro")
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize(
    "mode,expected",
    [("ours", (10, 22, 8)), ("ours-micro", (32, 0, 0)), ("ours-macro", (0, 32, 8)), ("triplanes-rgb", (32, 0, 0))],
)
def test_ablation_feature_split(mode, expected):
    assert RunConfig(mode=mode).features() == expected


def test_ablation_models_have_the_right_parts():
    micro = pipeline.build_model(RunConfig(mode="ours-micro"), [0])
    assert micro.bank is None and micro.entries[0].coeffs is None
    assert sum(p.size for p in micro.scene_parameters()) == trainable_params_per_scene(32, 32, 0)
    macro = pipeline.build_model(RunConfig(mode="ours-macro"), [0])
    assert macro.entries[0].micro is None and macro.bank.M == 8
    ours = pipeline.build_model(RunConfig(), [0])
    assert sum(p.size for p in ours.scene_parameters()) == trainable_params_per_scene(32, 10, 8)
    rgb = pipeline.build_model(RunConfig(mode="triplanes-rgb"), [0])
    assert rgb.out_channels == 3 and rgb.head.emission == "sigmoid"


# -- exit codes -------------------------------------------------------------------------------------------------
def test_table1_prints_csv(capsys):
    assert run("table1") == 0
    out = capsys.readouterr().out
    assert out.startswith("quantity,reproduced,reported")
    assert "break_even_scenes,80," in out


def test_usage_errors_exit_2(tmp_path, tiny_config):
    with pytest.raises(SystemExit) as err:
        run("no-such-command")
    assert err.value.code == 2
    with pytest.raises(SystemExit) as err:
        run("train", "--mode", "bogus")
    assert err.value.code == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"unknown_field": 1}))
    assert run("dataset", "--config", bad, "--out", tmp_path) == 2
    assert run("dataset", "--config", tmp_path / "missing.json", "--out", tmp_path) == 2


def test_missing_prerequisites_exit_3(tmp_path, tiny_config):
    assert run("train", "--config", tiny_config, "--out", tmp_path / "empty") == 3
    assert run("eval", "--config", tiny_config, "--out", tmp_path / "empty") == 3


def test_incompatible_prerequisite_exits_5(tmp_path, tiny_data):
    cfg, out = tiny_data
    other = tmp_path / "other.json"
    other.write_text(json.dumps({**TINY, "latent_channels": 3}))
    assert run("train", "--config", other, "--out", out) == 5


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_exits_4(tmp_path, tiny_data):
    cfg, out = tiny_data
    hot = tmp_path / "hot.json"
    hot.write_text(json.dumps({**TINY, "lr_head": 1e38, "warmup_steps": 6}))
    assert run("train", "--config", hot, "--out", out, "--mode", "ours-micro") == 4
    assert (out / "ours-micro" / "train" / "nan_dump.json").is_file()


# -- end to end ---------------------------------------------------------------------------------------------------
def test_full_tiny_pipeline_with_render(tmp_path, tiny_data, capsys):
    cfg, out = tiny_data
    for cmd in ("train", "exploit", "eval"):
        assert run(cmd, "--config", cfg, "--out", out) == 0
    summary = (out / "ours" / "eval" / "summary.csv").read_text().splitlines()
    assert summary[0] == "mode,group,mean_psnr_db,n_views"
    assert len(summary) == 3
    rows = (out / "ours" / "eval" / "metrics.csv").read_text().splitlines()
    assert len(rows) == 1 + 2 * 2 * 1  # header + groups x scenes x test views
    for stage in ("train", "exploit"):
        manifest = json.loads((out / "ours" / stage / "run_manifest.json").read_text())
        assert manifest["config"]["seed"] == 0 and len(manifest["code_hash"]) == 40
        header = (out / "ours" / stage / "losses.csv").read_text().splitlines()[0]
        assert header == "step,stage,scene_id,L_ae,L_Enc,L_Dec,total"
    capsys.readouterr()
    assert run("render", "--config", cfg, "--out", out, "--scene", 2, "--poses", "0,3") == 0
    written = json.loads(capsys.readouterr().out)
    assert len(written) == 4
    assert np.load(out / "ours" / "renders" / "scene_00002_view_0003_latent.npy").shape == (4, 4, 4)
    assert run("render", "--config", cfg, "--out", out, "--scene", 99) == 2
    assert run("render", "--config", cfg, "--out", out, "--scene", 2, "--poses", "42") == 2


@pytest.mark.parametrize("mode", ["triplanes-rgb", "ours-no-prior"])
def test_other_modes_run(tiny_data, mode):
    cfg, out = tiny_data
    for cmd in ("train", "exploit", "eval"):
        assert run(cmd, "--config", cfg, "--out", out, "--mode", mode) == 0


def test_module_entry_point_is_deterministic(tmp_path, tiny_config):
    def pipeline_run(out):
        for cmd in ("dataset", "pretrain-ae", "train", "exploit", "eval"):
            subprocess.run(
                [sys.executable, "-m", "latent_triplanes", cmd, "--config", tiny_config, "--out", str(out), "--deterministic"],
                check=True,
                capture_output=True,
            )

    pipeline_run(tmp_path / "a")
    pipeline_run(tmp_path / "b")
    for rel in ("ours/eval/metrics.csv", "ours/train/payload.bin", "ours/exploit/payload.bin", "ae/payload.bin", "ours/train/losses.csv"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel
    assert not (tmp_path / "a" / "ours" / "train" / "timing.json").exists()
