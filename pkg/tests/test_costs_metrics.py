import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latent_triplanes.checkpoint import PAYLOAD, save_params
from latent_triplanes.costs_metrics import (
    MB,
    PSNR_CAP,
    CostModel,
    MetricRecord,
    break_even,
    count_bytes,
    effective_memory,
    effective_time,
    plane_bytes,
    psnr,
    table1_csv,
    table1_reproduction,
    total_memory,
    total_time,
    write_metrics_csv,
)
from latent_triplanes.latent_ae import AEConfig, Autoencoder
from latent_triplanes.tensor_core import Parameter
from latent_triplanes.training import FieldModel

from oracles import psnr_loop


# -- psnr ---------------------------------------------------------------------------------------
def test_identical_images_hit_the_cap():
    img = np.random.default_rng(0).uniform(size=(4, 4, 3))
    assert psnr(img, img) == PSNR_CAP
    assert MetricRecord(0, "train_scenes", "test", psnr(img, img), "eval").capped


def test_mse_of_one_hundredth_is_20db():
    a = np.zeros((10, 10))
    b = np.full((10, 10), 0.1)
    assert psnr(a, b) == pytest.approx(20.0)


def test_psnr_matches_scalar_oracle():
    rng = np.random.default_rng(1)
    for _ in range(5):
        a, b = rng.uniform(size=(8, 8, 3)), rng.uniform(size=(8, 8, 3))
        assert psnr(a, b) == pytest.approx(psnr_loop(a, b), abs=1e-6)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2)), np.zeros((2, 3)))


# -- cost identities --------------------------------------------------------------------------------
def test_total_time_examples():
    assert total_time(2400, 1000, 2) == 4400
    assert total_time(0, 37, 3.5) == 37 * 3.5


def test_break_even_against_rgb_planes():
    n = break_even(2400, 2, 32)
    assert n == 80
    assert total_time(2400, 80, 2) == total_time(0, 80, 32)
    assert break_even(10, 5, 5) == float("inf")


def test_effective_time_from_reference_inputs():
    assert effective_time(2400, 1000, 2) == pytest.approx(4.4)
    assert abs(effective_time(2400, 1000, 2) - 4.5) <= 0.15
    assert 1 - 4.5 / 32 == pytest.approx(0.86, abs=0.01)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 1e4), st.floats(0, 100), st.integers(1, 10_000))
def test_effective_costs_strictly_decrease_towards_per_scene(entry, per_scene, n):
    for fn in (effective_time, effective_memory):
        assert fn(entry, n + 1, per_scene) < fn(entry, n, per_scene)
        assert fn(entry, n, per_scene) > per_scene
    assert effective_time(entry, 10**12, per_scene) == pytest.approx(per_scene, abs=1e-8)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1e4), st.floats(0, 100), st.integers(1, 10_000))
def test_effective_is_total_over_n(entry, per_scene, n):
    assert effective_memory(entry, n, per_scene) == pytest.approx(total_memory(entry, n, per_scene) / n)
    assert effective_time(entry, n, per_scene) == pytest.approx(total_time(entry, n, per_scene) / n)


def test_invalid_cost_inputs():
    with pytest.raises(ValueError):
        effective_time(1, 0, 1)
    with pytest.raises(ValueError):
        total_memory(-1, 1, 1)
    with pytest.raises(ValueError):
        CostModel(1, 1, 1, 1, 0)


def test_cost_model_properties_agree_with_functions():
    c = CostModel(t_EC=2400, t_scene=2, m_EC=40.0, m_scene=0.47, N_exploit=1000)
    assert c.total_time == 4400 and c.effective_time == pytest.approx(4.4)
    assert c.effective_memory == pytest.approx(0.04 + 0.47)
    assert c.total_memory == pytest.approx(40 + 470)


# -- byte arithmetic ----------------------------------------------------------------------------------
def test_plane_byte_examples():
    assert plane_bytes(64, 10) == 491_520
    assert plane_bytes(64, 10) / MB == pytest.approx(0.47, abs=0.005)
    assert plane_bytes(64, 32) == 1_572_864
    assert plane_bytes(64, 32) / MB == 1.5
    assert plane_bytes(64, 22, 50) == 54_067_200


def test_count_bytes_groups():
    params = [
        Parameter(np.zeros((50, 3, 64, 64, 22)), name="bank"),
        Parameter(np.zeros(50), name="scene/0/coeffs"),
        Parameter(np.zeros((3, 64, 64, 10)), name="scene/0/micro"),
        Parameter(np.zeros((4, 3, 4, 4)), name="encoder/down0.w"),
        Parameter(np.zeros(7), name="decoder/up0.b"),
        Parameter(np.zeros((2, 3)), name="head/l1.w"),
    ]
    r = count_bytes(params)
    assert r["m_B"] == 54_067_200 and r["m_W"] == 200 and r["m_T"] == 491_520
    assert r["m_E"] == 768 and r["m_D"] == 28 and r["other"] == 24
    assert r["m_B"] / 1000 / MB == pytest.approx(0.0516, abs=1e-4)
    assert r["total"] == sum(v for k, v in r.items() if k != "total")


def test_count_bytes_empty():
    r = count_bytes([])
    assert all(v == 0 for v in r.values())


def test_count_bytes_equals_checkpoint_payload(tmp_path):
    rng = np.random.default_rng(2)
    ae = Autoencoder.random(AEConfig(downsample_factor=4, latent_channels=2, widths=(3, 4)))
    model = FieldModel.create([0, 1, 2], 8, 3, 5, 4, 2, rng)
    params = list(ae.parameters()) + model.parameters()
    save_params(tmp_path / "ck", params)
    assert count_bytes(params)["total"] == (tmp_path / "ck" / PAYLOAD).stat().st_size


# -- cost table -------------------------------------------------------------------------------------------
def test_table1_reproduction_values():
    r = table1_reproduction()
    assert r["t_scene_eff"] == pytest.approx(4.4)
    assert r["m_scene"] == pytest.approx(0.47, abs=0.005)
    assert r["m_scene_eff"] == pytest.approx(0.84, abs=0.02)
    assert r["m_rgb"] == 1.5
    assert r["time_reduction_from_reported"] == pytest.approx(0.86, abs=0.01)
    assert r["memory_reduction"] == pytest.approx(0.44, abs=0.01)
    assert r["break_even_scenes"] == 80


def test_table1_csv_layout():
    lines = table1_csv().strip().splitlines()
    assert lines[0] == "quantity,reproduced,reported"
    assert any(line.startswith("t_scene_eff_min,4.4,4.5") for line in lines)


def test_metrics_csv(tmp_path):
    write_metrics_csv([MetricRecord(3, "train_scenes", "test", 27.5, "eval")], tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text() == "scene_id,group,view,psnr_db,stage\n3,train_scenes,test,27.500000,eval\n"
