"""Stage functions behind the command line: each reads its inputs from and writes its outputs to a run directory.

Run directory layout::

    <out>/data/train/, <out>/data/exploit/      datasets
    <out>/ae/                                    pretrained autoencoder checkpoint
    <out>/<mode>/train/                          joint-training checkpoint + losses.csv
    <out>/<mode>/exploit/                        exploitation checkpoint + losses.csv
    <out>/<mode>/eval/                           metrics.csv, summary.csv
    <out>/<mode>/renders/                        PNG / .npy exports

Every stage writes ``run_manifest.json`` next to its outputs.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import ConfigError, RunConfig, code_hash
from .costs_metrics import MetricRecord, write_metrics_csv
from .latent_ae import Autoencoder
from .scenes import BACKGROUND, SceneDataset, load_dataset, make_dataset, save_dataset, save_png
from .tensor_core import no_grad
from .training import (
    FieldModel,
    LatentCache,
    exploit,
    fit_scenes_rgb,
    pretrain_autoencoder,
    reconstruction_psnr,
    train_3daae,
    view_psnrs,
    write_loss_csv,
)

GROUP_TRAIN = "Train scenes"
GROUP_EXPLOIT = "Exploit scenes"


class MissingPrerequisite(RuntimeError):
    pass


class StageOrderError(RuntimeError):
    """A prerequisite exists but was produced by an incompatible configuration."""


# -- paths and manifests ------------------------------------------------------------------------
class RunPaths:
    def __init__(self, out, mode: str):
        self.root = Path(out)
        self.data_train = self.root / "data" / "train"
        self.data_exploit = self.root / "data" / "exploit"
        self.ae = self.root / "ae"
        self.mode_dir = self.root / mode
        self.train = self.mode_dir / "train"
        self.exploit = self.mode_dir / "exploit"
        self.eval = self.mode_dir / "eval"
        self.renders = self.mode_dir / "renders"

    def rel(self, path: Path) -> str:
        """Path relative to the run root, so manifests do not depend on where the run lives."""
        return path.relative_to(self.root).as_posix()


def write_manifest(directory: Path, cfg: RunConfig, stage: str, inputs: dict | None = None, extra: dict | None = None) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "stage": stage,
        "config": cfg.to_dict(),
        "seeds": {"run": cfg.seed, "family": cfg.family_seed, "exploit_data": cfg.seed + 1},
        "code_hash": code_hash(),
        "inputs": inputs or {},
    }
    if extra:
        manifest.update(extra)
    (directory / "run_manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def _timing(directory: Path, cfg: RunConfig, seconds: float) -> None:
    # wall-clock is kept out of deterministic outputs
    if not cfg.deterministic:
        (directory / "timing.json").write_text(json.dumps({"seconds": round(seconds, 3)}))


def _require(path: Path, what: str, hint: str) -> None:
    if not path.exists():
        raise MissingPrerequisite(f"{what} not found at {path}; run `{hint}` first")


def _load_ds(path: Path, hint: str) -> SceneDataset:
    _require(path / "split.json", "dataset", hint)
    return load_dataset(path)


def _check_compatible(meta: dict, cfg: RunConfig, keys) -> None:
    stored = meta.get("config", {})
    diff = {k: (stored.get(k), getattr(cfg, k)) for k in keys if stored.get(k) != getattr(cfg, k)}
    if diff:
        raise StageOrderError(f"prerequisite was produced with a different configuration: {diff}")


_AE_KEYS = ("image_side", "latent_side", "latent_channels", "ae_widths")
_FIELD_KEYS = ("mode", "plane_resolution", "f_mic", "f_mac", "M", "head_hidden") + _AE_KEYS


def _rng(cfg: RunConfig, tag: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, tag])


# -- building blocks -------------------------------------------------------------------------------
def build_autoencoder(cfg: RunConfig) -> Autoencoder:
    return Autoencoder.random(cfg.ae_config(), seed=cfg.seed)


def build_model(cfg: RunConfig, scene_ids, tag: int = 101) -> FieldModel:
    f_mic, f_mac, M = cfg.features()
    if cfg.is_rgb:
        return FieldModel.create(
            scene_ids, cfg.plane_resolution, f_mic, f_mac, M, 3, _rng(cfg, tag), emission="sigmoid", background=BACKGROUND, hidden=cfg.head_hidden
        )
    return FieldModel.create(scene_ids, cfg.plane_resolution, f_mic, f_mac, M, cfg.latent_channels, _rng(cfg, tag), hidden=cfg.head_hidden)


def load_autoencoder(cfg: RunConfig, paths: RunPaths) -> Autoencoder:
    _require(paths.ae / checkpoint.MANIFEST, "autoencoder checkpoint", "pretrain-ae")
    _check_compatible(checkpoint.load_manifest(paths.ae)["meta"], cfg, _AE_KEYS)
    ae = build_autoencoder(cfg)
    checkpoint.load_into(paths.ae, ae.parameters())
    return ae


def load_stage(cfg: RunConfig, ckpt_dir: Path, hint: str) -> tuple[Autoencoder | None, FieldModel, dict]:
    """Rebuild the autoencoder (if any) and field model stored in a train/exploit checkpoint."""
    _require(ckpt_dir / checkpoint.MANIFEST, "checkpoint", hint)
    meta = checkpoint.load_manifest(ckpt_dir)["meta"]
    _check_compatible(meta, cfg, _FIELD_KEYS)
    model = build_model(cfg, meta["scene_ids"])
    params = model.parameters()
    ae = None
    if not cfg.is_rgb:
        ae = build_autoencoder(cfg)
        params = params + list(ae.parameters())
    checkpoint.load_into(ckpt_dir, params)
    return ae, model, meta


def _save_stage(ckpt_dir: Path, cfg: RunConfig, ae, model: FieldModel, extra_meta: dict) -> None:
    params = model.parameters() + ([] if ae is None else list(ae.parameters()))
    meta = {"config": cfg.to_dict(), "scene_ids": sorted(model.entries), **extra_meta}
    checkpoint.save_params(ckpt_dir, params, meta)


# -- stages -----------------------------------------------------------------------------------------
def stage_dataset(cfg: RunConfig, out) -> dict:
    paths = RunPaths(out, cfg.mode)
    t0 = time.perf_counter()
    train = make_dataset(cfg.n_train, cfg.n_poses, cfg.image_side, cfg.seed, cfg.family_seed, 0, cfg.supersample)
    save_dataset(train, paths.data_train)
    # exploit scenes come from the same family and the same cameras, with fresh ids
    expl = make_dataset(cfg.n_exploit, cfg.n_poses, cfg.image_side, cfg.seed, cfg.family_seed, cfg.n_train, cfg.supersample)
    save_dataset(expl, paths.data_exploit)
    write_manifest(paths.root / "data", cfg, "dataset")
    _timing(paths.root / "data", cfg, time.perf_counter() - t0)
    return {"train_scenes": train.scene_ids, "exploit_scenes": expl.scene_ids}


def stage_pretrain_ae(cfg: RunConfig, out) -> dict:
    paths = RunPaths(out, cfg.mode)
    ds = _load_ds(paths.data_train, "dataset")
    t0 = time.perf_counter()
    ae = build_autoencoder(cfg)
    images = np.stack([ds.images[s, p] for s, p in ds.items("train")])
    held_out = np.stack([ds.images[s, p] for s, p in ds.items("test")])
    history = pretrain_autoencoder(ae, images, cfg.ae_steps, cfg.ae_batch, cfg.ae_lr, seed=cfg.seed)
    score = reconstruction_psnr(ae, held_out)
    checkpoint.save_params(paths.ae, ae.parameters(), {"config": cfg.to_dict(), "heldout_psnr": round(score, 6)})
    write_loss_csv(history, paths.ae / "losses.csv")
    write_manifest(paths.ae, cfg, "pretrain-ae", {"dataset": paths.rel(paths.data_train)}, {"heldout_psnr": round(score, 6)})
    _timing(paths.ae, cfg, time.perf_counter() - t0)
    return {"heldout_psnr": score}


def stage_train(cfg: RunConfig, out) -> dict:
    paths = RunPaths(out, cfg.mode)
    ds = _load_ds(paths.data_train, "dataset")
    t0 = time.perf_counter()
    model = build_model(cfg, ds.scene_ids)
    sched = cfg.schedule()
    meta = {}
    if cfg.is_rgb:
        ae = None
        history = fit_scenes_rgb(
            ds, model, sched.warmup_steps + sched.steps, sched, cfg.seed, cfg.rgb_rays_per_image, stage="rgb_train", dump_dir=paths.train
        )
    else:
        ae = load_autoencoder(cfg, paths)
        history = train_3daae(ds, ae, model, sched, cfg.weights(), cfg.seed, dump_dir=paths.train).history
        cache = LatentCache().fill(ds, ae, "train")
        z = cache.get(sorted(cache.store))
        meta["latent_stats"] = {"mean": round(float(z.mean()), 6), "std": round(float(z.std()), 6)}
    _save_stage(paths.train, cfg, ae, model, meta)
    write_loss_csv(history, paths.train / "losses.csv")
    write_manifest(paths.train, cfg, "train", {"dataset": paths.rel(paths.data_train), "ae": paths.rel(paths.ae)}, meta)
    _timing(paths.train, cfg, time.perf_counter() - t0)
    return {"final_loss": history[-1].total if history else None}


def stage_exploit(cfg: RunConfig, out) -> dict:
    paths = RunPaths(out, cfg.mode)
    ds = _load_ds(paths.data_exploit, "dataset")
    ae, model, _ = load_stage(cfg, paths.train, "train")
    t0 = time.perf_counter()
    model.entries = {}
    model.add_scenes(ds.scene_ids, _rng(cfg, 202))
    if cfg.mode == "ours-no-prior":
        model.reset_bank(_rng(cfg, 303))
    sched = cfg.schedule()
    if cfg.is_rgb:
        history = fit_scenes_rgb(
            ds, model, sched.exploit_steps + sched.finetune_steps, sched, cfg.seed, cfg.rgb_rays_per_image,
            train_bank=not cfg.freeze_bank_in_exploit, stage="rgb_exploit", dump_dir=paths.exploit,
        )
    else:
        history = exploit(ds, ae, model, sched, cfg.seed, freeze_bank=cfg.freeze_bank_in_exploit, dump_dir=paths.exploit).history
    _save_stage(paths.exploit, cfg, ae, model, {})
    write_loss_csv(history, paths.exploit / "losses.csv")
    write_manifest(paths.exploit, cfg, "exploit", {"dataset": paths.rel(paths.data_exploit), "train": paths.rel(paths.train)})
    _timing(paths.exploit, cfg, time.perf_counter() - t0)
    return {"final_loss": history[-1].total if history else None}


def stage_eval(cfg: RunConfig, out) -> dict:
    """Test-view PSNR for the training scenes (joint-training checkpoint) and the exploit scenes."""
    paths = RunPaths(out, cfg.mode)
    records = []
    for group, data_dir, ckpt_dir, hint in (
        (GROUP_TRAIN, paths.data_train, paths.train, "train"),
        (GROUP_EXPLOIT, paths.data_exploit, paths.exploit, "exploit"),
    ):
        ds = _load_ds(data_dir, "dataset")
        ae, model, _ = load_stage(cfg, ckpt_dir, hint)
        scores = view_psnrs(ds, model, ae, "test", cfg.n_samples)
        for (sid, p), value in sorted(scores.items()):
            records.append(MetricRecord(sid, group, "test", value, f"{hint}:{p}"))
    paths.eval.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(records, paths.eval / "metrics.csv")
    summary = {}
    for group in (GROUP_TRAIN, GROUP_EXPLOIT):
        vals = [r.psnr for r in records if r.group == group]
        summary[group] = float(np.mean(vals))
    with open(paths.eval / "summary.csv", "w") as fh:
        fh.write("mode,group,mean_psnr_db,n_views\n")
        for group, value in summary.items():
            n = sum(r.group == group for r in records)
            fh.write(f"{cfg.mode},{group},{value:.6f},{n}\n")
    write_manifest(paths.eval, cfg, "eval", {"train": paths.rel(paths.train), "exploit": paths.rel(paths.exploit)})
    return summary


def stage_render(cfg: RunConfig, out, scene_id: int, pose_indices, group: str = "exploit") -> list[Path]:
    """Export renders of one scene: decoded RGB as PNG and raw latents as ``.npy``."""
    paths = RunPaths(out, cfg.mode)
    data_dir, ckpt_dir = (paths.data_exploit, paths.exploit) if group == "exploit" else (paths.data_train, paths.train)
    ds = _load_ds(data_dir, "dataset")
    ae, model, _ = load_stage(cfg, ckpt_dir, group)
    if scene_id not in model.entries:
        raise ConfigError(f"scene {scene_id} is not in the {group} checkpoint (have {sorted(model.entries)})")
    bad = [int(p) for p in pose_indices if not 0 <= int(p) < len(ds.poses)]
    if bad:
        raise ConfigError(f"pose indices {bad} out of range 0..{len(ds.poses) - 1}")
    paths.renders.mkdir(parents=True, exist_ok=True)
    written = []
    with no_grad():
        for p in pose_indices:
            pose = ds.poses[int(p)]
            stem = paths.renders / f"scene_{scene_id:05d}_view_{int(p):04d}"
            if ae is None:
                rgb = model.render([scene_id], [pose], ds.image_side, cfg.n_samples).data[0]
            else:
                z = model.render([scene_id], [pose], cfg.latent_side, cfg.n_samples)
                np.save(f"{stem}_latent.npy", z.data[0])
                written.append(Path(f"{stem}_latent.npy"))
                rgb = ae.decoder(z).data[0]
            save_png(rgb, f"{stem}.png")
            written.append(Path(f"{stem}.png"))
    write_manifest(paths.renders, cfg, "render", {"checkpoint": str(ckpt_dir)}, {"scene_id": scene_id, "poses": [int(p) for p in pose_indices]})
    return written

