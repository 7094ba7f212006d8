"""Objectives and training loops.

Losses:
    * Encode-Scene: ``mse(E(x_p), R(T, p))`` against cached encodings.
    * Decode-Scene: ``mse(x_p, D(R(T, p)))`` in RGB space.
    * mixed: ``(1 - t) L_D + t L_E``.
    * joint autoencoder objective:
      ``λ_ae mse(x, D(E(x))) + λ_Enc mse(E(x), R(T, p)) + λ_Dec mse(x, D(R(T, p)))``
      where the encoding is *not* detached, so the encoder is pulled towards
      latents a tri-plane can reproduce.

Loops:
    * :func:`pretrain_autoencoder` - plain reconstruction training.
    * :func:`train_3daae` - warmup with the autoencoder frozen, then joint steps.
    * :func:`exploit` - Encode-Scene on new scenes from cached latents, then a
      decoder finetune with the Decode-Scene loss. The bank and renderer head
      keep training in both phases.

A "step" is one optimizer update on a mini-batch of (scene, pose) pairs; the
pairs are reshuffled every time the sampler runs through them.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .latent_ae import Autoencoder
from .scenes import BACKGROUND, SceneDataset
from .tensor_core import Adam, Parameter, Tensor, backward, concat, mse, no_grad
from .triplane import GlobalBank, SceneEntry, compose_batch
from .volume_renderer import RendererHead, generate_rays, render_batch, render_rays

log = logging.getLogger(__name__)


class NumericalError(FloatingPointError):
    """A loss went non-finite; ``dump`` holds the state at the failing step."""

    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


@dataclass
class LossWeights:
    ae: float = 1.0
    enc: float = 1.0
    dec: float = 1.0
    t_mix: float = 0.5

    def __post_init__(self):
        if min(self.ae, self.enc, self.dec) < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0.0 <= self.t_mix <= 1.0:
            raise ValueError("t_mix must lie in [0, 1]")


@dataclass
class StageSchedule:
    warmup_steps: int = 200
    steps: int = 600  # joint steps after warmup
    exploit_steps: int = 400  # Encode-Scene phase
    finetune_steps: int = 100  # decoder finetune phase
    batch_size: int = 4
    lr_planes: float = 1e-2
    lr_head: float = 2e-3
    lr_ae: float = 2e-4
    n_samples: int = 48

    def __post_init__(self):
        for name in ("warmup_steps", "steps", "exploit_steps", "finetune_steps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class LossRecord:
    step: int
    stage: str
    scene_ids: tuple
    L_ae: float | None
    L_Enc: float | None
    L_Dec: float | None
    total: float


def write_loss_csv(records: Iterable[LossRecord], path) -> None:
    def fmt(v):
        return "" if v is None else f"{v:.9g}"

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "stage", "scene_id", "L_ae", "L_Enc", "L_Dec", "total"])
        for r in records:
            w.writerow([r.step, r.stage, " ".join(str(s) for s in r.scene_ids), fmt(r.L_ae), fmt(r.L_Enc), fmt(r.L_Dec), fmt(r.total)])


# -- scene-side model ---------------------------------------------------------------
@dataclass
class FieldModel:
    """Everything on the 3D side: renderer head, optional shared bank, per-scene entries."""

    head: RendererHead
    bank: GlobalBank | None
    entries: dict
    plane_resolution: int
    f_mic: int
    f_mac: int
    background: np.ndarray

    @property
    def M(self) -> int:
        return 0 if self.bank is None else self.bank.M

    @property
    def out_channels(self) -> int:
        return self.head.out_features

    @classmethod
    def create(
        cls,
        scene_ids: Sequence[int],
        plane_resolution: int,
        f_mic: int,
        f_mac: int,
        M: int,
        out_channels: int,
        rng: np.random.Generator,
        emission: str = "identity",
        background=None,
        hidden: int = 64,
    ) -> "FieldModel":
        if f_mic + f_mac <= 0:
            raise ValueError("f_mic + f_mac must be positive")
        if f_mac > 0 and M <= 0:
            raise ValueError("a macro part needs M >= 1 bank planes")
        head = RendererHead.random(f_mic + f_mac, out_channels, rng, hidden=hidden, emission=emission)
        bank = GlobalBank.random(M, plane_resolution, f_mac, rng) if f_mac > 0 else None
        bg = np.zeros(out_channels) if background is None else np.asarray(background, dtype=np.float64)
        model = cls(head, bank, {}, plane_resolution, f_mic, f_mac, bg)
        model.add_scenes(scene_ids, rng)
        return model

    def add_scenes(self, scene_ids: Sequence[int], rng: np.random.Generator) -> None:
        """Fresh random entries (replacing any existing ones with the same id)."""
        for sid in scene_ids:
            self.entries[int(sid)] = SceneEntry.random(int(sid), self.plane_resolution, self.f_mic, self.M, rng)

    def reset_bank(self, rng: np.random.Generator) -> None:
        if self.bank is not None:
            fresh = GlobalBank.random(self.M, self.plane_resolution, self.f_mac, rng)
            self.bank.bases.data[...] = fresh.bases.data

    def scene_parameters(self) -> list[Parameter]:
        return [p for e in self.entries.values() for p in e.parameters()]

    def shared_parameters(self) -> list[Parameter]:
        ps = list(self.head.parameters())
        if self.bank is not None:
            ps.append(self.bank.bases)
        return ps

    def parameters(self) -> list[Parameter]:
        return self.shared_parameters() + self.scene_parameters()

    def planes_for(self, scene_ids: Sequence[int]) -> Tensor:
        return compose_batch([self.entries[int(s)] for s in scene_ids], self.bank)

    def render(self, scene_ids, poses, image_side, n_samples, rng=None) -> Tensor:
        return render_batch(self.planes_for(scene_ids), self.head, poses, image_side, n_samples, rng, self.background)


# -- losses ----------------------------------------------------------------------------
def loss_encode_scene(z, z_tilde) -> Tensor:
    """Mean squared error between target latents and rendered latents."""
    return mse(_t(z_tilde), _t(z))


def loss_decode_scene(x, x_tilde) -> Tensor:
    """Mean squared error in RGB space between ground truth and decoded renders."""
    return mse(_t(x_tilde), _t(x))


def loss_mixed(L_D, L_E, t_mix: float):
    """Convex blend ``(1 - t) L_D + t L_E``; the endpoints return the inputs unchanged."""
    if t_mix == 0:
        return L_D
    if t_mix == 1:
        return L_E
    return L_D * (1.0 - t_mix) + L_E * t_mix


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


@dataclass
class JointLoss:
    total: Tensor
    L_ae: Tensor | None
    L_Enc: Tensor | None
    L_Dec: Tensor | None


def loss_3daae(
    x: np.ndarray,
    poses,
    scene_ids: Sequence[int],
    model: FieldModel,
    ae: Autoencoder,
    weights: LossWeights,
    n_samples: int,
    rng: np.random.Generator | None = None,
    z_target: np.ndarray | None = None,
) -> JointLoss:
    """Joint objective on a batch of images ``x`` (B, H, W, 3).

    With ``z_target`` given, the encoding is taken from it (frozen-encoder
    stages) and ``L_ae`` is skipped.
    """
    xt = Tensor(np.asarray(x, dtype=np.float32))
    side = ae.latent_side(xt.shape[1])
    need_render = weights.enc > 0 or weights.dec > 0
    need_ae = weights.ae > 0 and z_target is None
    z = Tensor(z_target) if z_target is not None else ae.encoder(xt)
    z_tilde = model.render(scene_ids, poses, side, n_samples, rng) if need_render else None
    L_ae = L_enc = L_dec = None

    dec_in = []
    if need_ae:
        dec_in.append(z)
    if need_render and weights.dec > 0:
        dec_in.append(z_tilde)
    if dec_in:
        out = ae.decoder(dec_in[0] if len(dec_in) == 1 else concat(dec_in, axis=0))
        B = xt.shape[0]
        if need_ae:
            L_ae = mse(out[:B] if len(dec_in) > 1 else out, xt)
        if need_render and weights.dec > 0:
            L_dec = mse(out[B:] if len(dec_in) > 1 else out, xt)
    if need_render and weights.enc > 0:
        L_enc = mse(z_tilde, z)

    total = None
    for w, term in ((weights.ae, L_ae), (weights.enc, L_enc), (weights.dec, L_dec)):
        if term is None or w == 0:
            continue
        total = term * w if total is None else total + term * w
    if total is None:
        raise ValueError("all loss terms are disabled")
    return JointLoss(total, L_ae, L_enc, L_dec)


# -- data plumbing ----------------------------------------------------------------------
class BatchSampler:
    """Endless mini-batches over ``items``, reshuffled after each full pass."""

    def __init__(self, items: Sequence, batch_size: int, rng: np.random.Generator):
        if not items:
            raise ValueError("cannot sample from an empty dataset")
        self.items = list(items)
        self.batch_size = min(batch_size, len(self.items))
        self.rng = rng
        self._order: list[int] = []

    def next(self) -> list:
        batch = []
        while len(batch) < self.batch_size:
            if not self._order:
                self._order = list(self.rng.permutation(len(self.items)))
            batch.append(self.items[self._order.pop()])
        return batch


class LatentCache:
    """Encodings of dataset images keyed by ``(scene_id, pose_index)``."""

    def __init__(self):
        self.store: dict[tuple[int, int], np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.store)

    def __contains__(self, key) -> bool:
        return key in self.store

    def fill(self, ds: SceneDataset, ae: Autoencoder, split: str = "train", chunk: int = 32) -> "LatentCache":
        items = ds.items(split)
        with no_grad():
            for i in range(0, len(items), chunk):
                part = items[i : i + chunk]
                x = np.stack([ds.images[s, p] for s, p in part]).astype(np.float32)
                z = ae.encoder(Tensor(x)).data
                for (s, p), zi in zip(part, z):
                    self.store[(ds.specs[s].scene_id, p)] = zi
        return self

    def get(self, keys) -> np.ndarray:
        return np.stack([self.store[k] for k in keys])

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {f"latent/{s}/{p}": z for (s, p), z in self.store.items()}

    @classmethod
    def from_arrays(cls, arrays: dict) -> "LatentCache":
        cache = cls()
        for name, z in arrays.items():
            _, s, p = name.split("/")
            cache.store[(int(s), int(p))] = np.asarray(z, dtype=np.float32)
        return cache


def _set_trainable(params: Iterable[Parameter], flag: bool) -> None:
    for p in params:
        p.trainable = flag


class _Optimizers:
    """One Adam per parameter group so each group keeps its own learning rate."""

    def __init__(self, groups: Sequence[tuple[list[Parameter], float]]):
        self.opts = [Adam(ps, lr=lr) for ps, lr in groups if ps]

    def step(self) -> None:
        for o in self.opts:
            if any(p.trainable and p.grad is not None for p in o.params):
                o.step()

    def zero_grad(self) -> None:
        for o in self.opts:
            o.zero_grad()


def _check_finite(stage: str, step: int, batch_ids, comps: dict, dump_dir) -> None:
    bad = {k: v for k, v in comps.items() if v is not None and not np.isfinite(v)}
    if not bad:
        return
    dump = {"stage": stage, "step": step, "scene_ids": list(map(int, batch_ids)), "losses": comps}
    if dump_dir is not None:
        Path(dump_dir).mkdir(parents=True, exist_ok=True)
        (Path(dump_dir) / "nan_dump.json").write_text(json.dumps(dump, indent=1, default=str))
    raise NumericalError(f"non-finite loss in stage {stage!r} at step {step}: {bad}", dump)


def _run_stage(
    stage: str,
    n_steps: int,
    sampler: BatchSampler,
    loss_fn: Callable[[list], JointLoss],
    opt: _Optimizers,
    history: list,
    dump_dir=None,
    on_step: Callable[[int], None] | None = None,
) -> None:
    for step in range(n_steps):
        batch = sampler.next()
        ids = tuple(int(b[0]) for b in batch)
        losses = loss_fn(batch)
        comps = {
            "L_ae": None if losses.L_ae is None else losses.L_ae.item(),
            "L_Enc": None if losses.L_Enc is None else losses.L_Enc.item(),
            "L_Dec": None if losses.L_Dec is None else losses.L_Dec.item(),
            "total": losses.total.item(),
        }
        _check_finite(stage, step, ids, comps, dump_dir)
        backward(losses.total)
        opt.step()
        opt.zero_grad()
        history.append(LossRecord(step, stage, ids, comps["L_ae"], comps["L_Enc"], comps["L_Dec"], comps["total"]))
        if on_step is not None:
            on_step(step)


def _scene_items(ds: SceneDataset, split: str = "train") -> list[tuple[int, int, int]]:
    """``(scene_id, scene_index, pose_index)`` triples."""
    return [(ds.specs[s].scene_id, s, p) for s, p in ds.items(split)]


def _stage_rngs(seed: int, stage: str) -> tuple[np.random.Generator, np.random.Generator]:
    tag = sum((i + 1) * ord(c) for i, c in enumerate(stage))
    return np.random.default_rng([seed, tag, 0]), np.random.default_rng([seed, tag, 1])


# -- autoencoder pretraining ----------------------------------------------------------
def pretrain_autoencoder(
    ae: Autoencoder,
    images: np.ndarray,
    steps: int,
    batch_size: int = 8,
    lr: float = 2e-3,
    seed: int = 0,
    history: list | None = None,
) -> list:
    """Reconstruction training on ``images`` (N, H, W, 3) with a cosine-decayed learning rate."""
    history = [] if history is None else history
    if len(images) == 0:
        raise ValueError("no images to pretrain on")
    _set_trainable(ae.parameters(), True)
    opt = _Optimizers([(list(ae.parameters()), lr)])
    sampler = BatchSampler(list(range(len(images))), batch_size, np.random.default_rng([seed, 17]))

    def loss_fn(batch):
        x = Tensor(images[[i for _, i in batch]].astype(np.float32))
        L = mse(ae.decoder(ae.encoder(x)), x)
        return JointLoss(L, L, None, None)

    def decay(step):
        opt.opts[0].lr = lr * 0.5 * (1.0 + np.cos(np.pi * (step + 1) / steps))

    # pseudo scene id -1: pretraining rows are not tied to scenes
    _run_stage("pretrain_ae", steps, _Wrap(sampler), loss_fn, opt, history, on_step=decay)
    _set_trainable(ae.parameters(), False)
    return history


class _Wrap:
    def __init__(self, sampler):
        self.sampler = sampler

    def next(self):
        return [(-1, i) for i in self.sampler.next()]


def reconstruction_psnr(ae: Autoencoder, images: np.ndarray, chunk: int = 32) -> float:
    """Mean per-image PSNR of ``D(E(x))`` over ``images``."""
    from .costs_metrics import psnr

    vals = []
    with no_grad():
        for i in range(0, len(images), chunk):
            x = images[i : i + chunk].astype(np.float32)
            xh = ae.decoder(ae.encoder(Tensor(x))).data
            vals.extend(psnr(a, b) for a, b in zip(xh, x))
    return float(np.mean(vals))


# -- joint training ----------------------------------------------------------------------
@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    changed: dict = field(default_factory=dict)  # stage -> names of parameters that moved


def snapshot(params: Iterable[Parameter]) -> dict[str, np.ndarray]:
    return {p.name: p.data.copy() for p in params}


def changed_names(before: dict, params: Iterable[Parameter]) -> set[str]:
    return {p.name for p in params if p.name in before and not np.array_equal(before[p.name], p.data)}


def train_3daae(
    ds: SceneDataset,
    ae: Autoencoder,
    model: FieldModel,
    schedule: StageSchedule,
    weights: LossWeights,
    seed: int = 0,
    dump_dir=None,
    track_changes: bool = False,
) -> TrainResult:
    """Warmup (autoencoder frozen) followed by joint training of everything."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    items = _scene_items(ds, "train")
    result = TrainResult()
    ae_params = list(ae.parameters())
    all_params = ae_params + model.parameters()

    def make_loss(frozen_ae: bool, cache: LatentCache | None, srng):
        def loss_fn(batch):
            x = np.stack([ds.images[s, p] for _, s, p in batch])
            poses = [ds.poses[p] for _, _, p in batch]
            ids = [sid for sid, _, _ in batch]
            z_target = cache.get([(sid, p) for sid, _, p in batch]) if frozen_ae else None
            return loss_3daae(x, poses, ids, model, ae, weights, schedule.n_samples, srng, z_target)

        return loss_fn

    # warmup: autoencoder frozen, targets from cached encodings
    if schedule.warmup_steps > 0:
        _set_trainable(ae_params, False)
        _set_trainable(model.parameters(), True)
        cache = LatentCache().fill(ds, ae, "train")
        brng, srng = _stage_rngs(seed, "warmup")
        opt = _Optimizers([(model.scene_parameters() + _bank(model), schedule.lr_planes), (list(model.head.parameters()), schedule.lr_head)])
        before = snapshot(all_params) if track_changes else None
        _run_stage("warmup", schedule.warmup_steps, BatchSampler(items, schedule.batch_size, brng), make_loss(True, cache, srng), opt, result.history, dump_dir)
        if track_changes:
            result.changed["warmup"] = changed_names(before, all_params)

    if schedule.steps > 0:
        _set_trainable(ae_params, True)
        _set_trainable(model.parameters(), True)
        brng, srng = _stage_rngs(seed, "joint")
        opt = _Optimizers(
            [
                (model.scene_parameters() + _bank(model), schedule.lr_planes),
                (list(model.head.parameters()), schedule.lr_head),
                (ae_params, schedule.lr_ae),
            ]
        )
        before = snapshot(all_params) if track_changes else None
        _run_stage("joint", schedule.steps, BatchSampler(items, schedule.batch_size, brng), make_loss(False, None, srng), opt, result.history, dump_dir)
        if track_changes:
            result.changed["joint"] = changed_names(before, all_params)
    _set_trainable(ae_params, False)
    return result


def _bank(model: FieldModel) -> list[Parameter]:
    return [] if model.bank is None else [model.bank.bases]


# -- scene fitting with a frozen autoencoder --------------------------------------------
def fit_scenes(
    ds: SceneDataset,
    ae: Autoencoder,
    model: FieldModel,
    steps: int,
    schedule: StageSchedule,
    mode: str = "encode",
    t_mix: float = 0.5,
    seed: int = 0,
    cache: LatentCache | None = None,
    train_bank: bool = True,
    train_head: bool = True,
    history: list | None = None,
    stage: str | None = None,
    dump_dir=None,
) -> list:
    """Fit tri-planes to a dataset through a frozen autoencoder.

    ``mode`` is ``"encode"`` (latent targets), ``"decode"`` (RGB targets through
    the decoder) or ``"mixed"`` (convex blend with weight ``t_mix`` on the latent term).
    """
    history = [] if history is None else history
    stage = stage or f"fit_{mode}"
    _set_trainable(ae.parameters(), False)
    items = _scene_items(ds, "train")
    if mode in ("encode", "mixed") and cache is None:
        cache = LatentCache().fill(ds, ae, "train")
    _set_trainable(model.scene_parameters(), True)
    _set_trainable(_bank(model), train_bank)
    _set_trainable(model.head.parameters(), train_head)
    groups = [(model.scene_parameters() + (_bank(model) if train_bank else []), schedule.lr_planes)]
    if train_head:
        groups.append((list(model.head.parameters()), schedule.lr_head))
    opt = _Optimizers(groups)
    brng, srng = _stage_rngs(seed, stage)
    side = ae.latent_side(ds.image_side)

    def loss_fn(batch):
        ids = [sid for sid, _, _ in batch]
        poses = [ds.poses[p] for _, _, p in batch]
        z_tilde = model.render(ids, poses, side, schedule.n_samples, srng)
        L_E = L_D = None
        if mode in ("encode", "mixed"):
            L_E = loss_encode_scene(cache.get([(sid, p) for sid, _, p in batch]), z_tilde)
        if mode in ("decode", "mixed"):
            x = np.stack([ds.images[s, p] for _, s, p in batch])
            L_D = loss_decode_scene(x, ae.decoder(z_tilde))
        total = L_E if mode == "encode" else L_D if mode == "decode" else loss_mixed(L_D, L_E, t_mix)
        return JointLoss(total, None, L_E, L_D)

    _run_stage(stage, steps, BatchSampler(items, schedule.batch_size, brng), loss_fn, opt, history, dump_dir)
    _set_trainable(model.parameters(), True)
    return history


# -- exploitation -------------------------------------------------------------------------
def exploit(
    ds: SceneDataset,
    ae: Autoencoder,
    model: FieldModel,
    schedule: StageSchedule,
    seed: int = 0,
    freeze_bank: bool = False,
    dump_dir=None,
    track_changes: bool = False,
) -> TrainResult:
    """Learn the scenes of ``ds`` in the frozen latent space, then finetune the decoder.

    ``model`` must already hold fresh entries for every scene of ``ds`` (see
    :meth:`FieldModel.add_scenes`); its head and bank come from joint training.
    """
    if len(ds) == 0:
        raise ValueError("empty dataset")
    missing = [s for s in ds.scene_ids if s not in model.entries]
    if missing:
        raise ValueError(f"no entries for scenes {missing}")
    result = TrainResult()
    ae_params = list(ae.parameters())
    watched = ae_params + model.parameters()
    enc_before = snapshot(ae.encoder.parameters())

    cache = LatentCache().fill(ds, ae, "train")
    before = snapshot(watched) if track_changes else None
    fit_scenes(
        ds, ae, model, schedule.exploit_steps, schedule, mode="encode", seed=seed, cache=cache,
        train_bank=not freeze_bank, history=result.history, stage="exploit_encode", dump_dir=dump_dir,
    )
    if track_changes:
        result.changed["exploit_encode"] = changed_names(before, watched)

    if schedule.finetune_steps > 0:
        _set_trainable(ae.encoder.parameters(), False)
        _set_trainable(ae.decoder.parameters(), True)
        _set_trainable(model.parameters(), True)
        _set_trainable(_bank(model), not freeze_bank)
        opt = _Optimizers(
            [
                (model.scene_parameters() + ([] if freeze_bank else _bank(model)), schedule.lr_planes),
                (list(model.head.parameters()), schedule.lr_head),
                (list(ae.decoder.parameters()), schedule.lr_ae),
            ]
        )
        brng, srng = _stage_rngs(seed, "exploit_finetune")
        side = ae.latent_side(ds.image_side)

        def loss_fn(batch):
            ids = [sid for sid, _, _ in batch]
            poses = [ds.poses[p] for _, _, p in batch]
            x = np.stack([ds.images[s, p] for _, s, p in batch])
            L_D = loss_decode_scene(x, ae.decoder(model.render(ids, poses, side, schedule.n_samples, srng)))
            return JointLoss(L_D, None, None, L_D)

        before = snapshot(watched) if track_changes else None
        _run_stage("exploit_finetune", schedule.finetune_steps, BatchSampler(_scene_items(ds), schedule.batch_size, brng), loss_fn, opt, result.history, dump_dir)
        if track_changes:
            result.changed["exploit_finetune"] = changed_names(before, watched)
    _set_trainable(ae_params, False)
    _set_trainable(model.parameters(), True)
    for name, val in snapshot(ae.encoder.parameters()).items():
        assert np.array_equal(val, enc_before[name]), f"encoder parameter {name} moved during exploitation"
    return result


# -- RGB-space baselines ----------------------------------------------------------------------
def fit_scenes_rgb(
    ds: SceneDataset,
    model: FieldModel,
    steps: int,
    schedule: StageSchedule,
    seed: int = 0,
    rays_per_image: int = 256,
    train_bank: bool = True,
    history: list | None = None,
    stage: str = "rgb",
    dump_dir=None,
) -> list:
    """Tri-planes trained directly on RGB pixels at full resolution (random ray subsets per image)."""
    history = [] if history is None else history
    items = _scene_items(ds, "train")
    _set_trainable(model.parameters(), True)
    _set_trainable(_bank(model), train_bank)
    opt = _Optimizers(
        [
            (model.scene_parameters() + (_bank(model) if train_bank else []), schedule.lr_planes),
            (list(model.head.parameters()), schedule.lr_head),
        ]
    )
    brng, srng = _stage_rngs(seed, stage)
    side = ds.image_side
    n_rays = min(rays_per_image, side * side)

    def loss_fn(batch):
        ids = [sid for sid, _, _ in batch]
        origins, dirs, targets = [], [], []
        near = far = None
        for _, s, p in batch:
            rays = generate_rays(ds.poses[p], side)
            pick = srng.choice(side * side, size=n_rays, replace=False)
            origins.append(rays.origins[pick])
            dirs.append(rays.directions[pick])
            targets.append(ds.images[s, p].reshape(-1, 3)[pick])
            near, far = rays.near, rays.far
        feat, _, _ = render_rays(
            model.planes_for(ids), model.head, np.stack(origins), np.stack(dirs), near, far, schedule.n_samples, srng, model.background
        )
        L = mse(feat, Tensor(np.stack(targets).astype(np.float32)))
        return JointLoss(L, None, None, L)

    _run_stage(stage, steps, BatchSampler(items, schedule.batch_size, brng), loss_fn, opt, history, dump_dir)
    _set_trainable(model.parameters(), True)
    return history


def rgb_background() -> np.ndarray:
    return BACKGROUND.copy()


# -- diagnostics ----------------------------------------------------------------------------------
def heldout_encode_loss(ds: SceneDataset, ae: Autoencoder, model: FieldModel, n_samples: int, chunk: int = 8) -> float:
    """``mse(E(x_p), R(T_s, p))`` averaged over the test poses of every scene in ``ds``."""
    items = _scene_items(ds, "test")
    side = ae.latent_side(ds.image_side)
    total, count = 0.0, 0
    with no_grad():
        for i in range(0, len(items), chunk):
            part = items[i : i + chunk]
            x = np.stack([ds.images[s, p] for _, s, p in part]).astype(np.float32)
            z = ae.encoder(Tensor(x)).data
            zt = model.render([sid for sid, _, _ in part], [ds.poses[p] for _, _, p in part], side, n_samples).data
            total += float(np.sum((z - zt) ** 2))
            count += z.size
    return total / count


def render_rgb_views(
    ds: SceneDataset, model: FieldModel, ae: Autoencoder | None, split: str, n_samples: int, chunk: int = 8
) -> dict:
    """Rendered (and decoded, when an autoencoder is given) RGB views keyed by ``(scene_id, pose_index)``."""
    items = _scene_items(ds, split)
    out = {}
    with no_grad():
        for i in range(0, len(items), chunk):
            part = items[i : i + chunk]
            ids = [sid for sid, _, _ in part]
            poses = [ds.poses[p] for _, _, p in part]
            if ae is None:
                imgs = model.render(ids, poses, ds.image_side, n_samples).data
            else:
                imgs = ae.decoder(model.render(ids, poses, ae.latent_side(ds.image_side), n_samples)).data
            for (sid, _, p), img in zip(part, imgs):
                out[(sid, p)] = np.clip(img, 0.0, 1.0)
    return out


def view_psnrs(ds: SceneDataset, model: FieldModel, ae: Autoencoder | None, split: str, n_samples: int) -> dict:
    """Per-view PSNR keyed by ``(scene_id, pose_index)``."""
    from .costs_metrics import psnr

    renders = render_rgb_views(ds, model, ae, split, n_samples)
    index = {s.scene_id: i for i, s in enumerate(ds.specs)}
    return {(sid, p): psnr(img, ds.images[index[sid], p]) for (sid, p), img in renders.items()}


def stage_expected_changes(model: FieldModel, ae: Autoencoder | None, stage: str, freeze_bank: bool = False) -> set[str]:
    """Names of parameters each stage is allowed (and expected) to move."""
    scene = {p.name for p in model.scene_parameters()}
    head = {p.name for p in model.head.parameters()}
    bank = set() if model.bank is None or freeze_bank else {model.bank.bases.name}
    enc = set() if ae is None else {p.name for p in ae.encoder.parameters()}
    dec = set() if ae is None else {p.name for p in ae.decoder.parameters()}
    table = {
        "warmup": scene | bank | head,
        "joint": scene | bank | head | enc | dec,
        "exploit_encode": scene | bank | head,
        "exploit_finetune": scene | bank | head | dec,
    }
    return table[stage]


__all__ = [
    "NumericalError",
    "LossWeights",
    "StageSchedule",
    "LossRecord",
    "FieldModel",
    "JointLoss",
    "BatchSampler",
    "LatentCache",
    "loss_encode_scene",
    "loss_decode_scene",
    "loss_mixed",
    "loss_3daae",
    "pretrain_autoencoder",
    "reconstruction_psnr",
    "train_3daae",
    "fit_scenes",
    "fit_scenes_rgb",
    "exploit",
    "heldout_encode_loss",
    "render_rgb_views",
    "view_psnrs",
    "snapshot",
    "changed_names",
    "stage_expected_changes",
    "write_loss_csv",
]
