"""Procedural families of similar toy scenes and an analytic ray tracer.

A *family* (``family_seed``) fixes a template: how many primitives, their
kinds and nominal placement. Each ``scene_id`` in the family perturbs sizes and
positions slightly and draws fresh albedos, so scenes look alike without being
identical. Everything stays inside the [-1, 1]^3 box.

Ground truth is flat Lambertian shading with an ambient term and one fixed
directional light, over a light-gray background.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .latent_ae import PosedImage
from .volume_renderer import CameraPose, generate_rays

BACKGROUND = np.array([0.9, 0.9, 0.9])
LIGHT_DIR = np.array([0.4, 0.3, 0.866]) / np.linalg.norm([0.4, 0.3, 0.866])
AMBIENT = 0.35
CAMERA_RADIUS = 2.5
ELEVATION_RANGE = (10.0, 50.0)
FIELD_OF_VIEW = float(np.deg2rad(45.0))
TRAIN_FRACTION = 0.9


@dataclass
class Primitive:
    kind: str  # "sphere" or "box"
    center: np.ndarray
    size: np.ndarray  # sphere: radius repeated; box: half extents
    albedo: np.ndarray

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.center - self.size, self.center + self.size

    def to_dict(self) -> dict:
        return {"kind": self.kind, "center": self.center.tolist(), "size": self.size.tolist(), "albedo": self.albedo.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Primitive":
        return cls(d["kind"], np.array(d["center"]), np.array(d["size"]), np.array(d["albedo"]))


@dataclass
class SceneSpec:
    scene_id: int
    primitives: list[Primitive]
    family_seed: int = 0

    def inside_unit_box(self, tol: float = 1e-12) -> bool:
        for p in self.primitives:
            lo, hi = p.bounds()
            if np.any(lo < -1 - tol) or np.any(hi > 1 + tol):
                return False
        return True

    def to_dict(self) -> dict:
        return {"scene_id": self.scene_id, "family_seed": self.family_seed, "primitives": [p.to_dict() for p in self.primitives]}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(int(d["scene_id"]), [Primitive.from_dict(p) for p in d["primitives"]], int(d["family_seed"]))


def family_template(family_seed: int) -> list[dict]:
    """Nominal primitives shared by every scene of a family."""
    rng = np.random.default_rng([family_seed, 7919])
    n = int(rng.integers(2, 6))
    template = []
    for _ in range(n):
        kind = "sphere" if rng.random() < 0.5 else "box"
        center = rng.uniform(-0.4, 0.4, size=3)
        if kind == "sphere":
            size = np.full(3, rng.uniform(0.2, 0.4))
        else:
            size = rng.uniform(0.15, 0.4, size=3)
        template.append({"kind": kind, "center": center, "size": size})
    return template


def generate_scene(scene_id: int, family_seed: int = 0) -> SceneSpec:
    """Deterministic scene ``scene_id`` of family ``family_seed``."""
    rng = np.random.default_rng([family_seed, scene_id, 104729])
    prims = []
    for t in family_template(family_seed):
        center = t["center"] + rng.uniform(-0.1, 0.1, size=3)
        scale = rng.uniform(0.75, 1.25) if t["kind"] == "sphere" else rng.uniform(0.75, 1.25, size=3)
        size = t["size"] * scale
        # shrink to stay inside the unit box
        limit = np.min(1.0 - np.abs(center))
        if t["kind"] == "sphere":
            size = np.full(3, min(size[0], limit))
        else:
            size = np.minimum(size, 1.0 - np.abs(center))
        albedo = rng.uniform(0.1, 0.8, size=3)
        prims.append(Primitive(t["kind"], center, size, albedo))
    return SceneSpec(scene_id, prims, family_seed)


def _intersect(prim: Primitive, o: np.ndarray, d: np.ndarray):
    """Nearest positive hit distance (inf on miss) and surface normals."""
    n_rays = o.shape[0]
    t = np.full(n_rays, np.inf)
    if prim.kind == "sphere":
        r = prim.size[0]
        oc = o - prim.center
        b = np.einsum("ij,ij->i", oc, d)
        c = np.einsum("ij,ij->i", oc, oc) - r * r
        disc = b * b - c
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t0 = -b - sq
        t1 = -b + sq
        tt = np.where(t0 > 1e-9, t0, t1)
        hit &= tt > 1e-9
        t[hit] = tt[hit]
        p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
        normal = (p - prim.center) / r
    else:
        lo, hi = prim.bounds()
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            ta = (lo - o) * inv
            tb = (hi - o) * inv
        tmin = np.nanmax(np.minimum(ta, tb), axis=1)
        tmax = np.nanmin(np.maximum(ta, tb), axis=1)
        hit = (tmax >= tmin) & (tmax > 1e-9)
        tt = np.where(tmin > 1e-9, tmin, tmax)
        t[hit] = tt[hit]
        p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
        q = (p - prim.center) / prim.size
        axis = np.argmax(np.abs(q), axis=1)
        normal = np.zeros_like(p)
        normal[np.arange(n_rays), axis] = np.sign(q[np.arange(n_rays), axis])
    return t, normal


def trace(spec: SceneSpec, origins: np.ndarray, directions: np.ndarray):
    """Shade rays against the scene; returns ``(rgb (N, 3), hit mask (N,))``."""
    n = origins.shape[0]
    best = np.full(n, np.inf)
    rgb = np.broadcast_to(BACKGROUND, (n, 3)).copy()
    for prim in spec.primitives:
        t, normal = _intersect(prim, origins, directions)
        closer = t < best
        if not np.any(closer):
            continue
        best[closer] = t[closer]
        lambert = np.clip(normal[closer] @ LIGHT_DIR, 0.0, None)
        rgb[closer] = prim.albedo * (AMBIENT + (1.0 - AMBIENT) * lambert)[:, None]
    return np.clip(rgb, 0.0, 1.0), np.isfinite(best)


def render_ground_truth(
    spec: SceneSpec, pose: CameraPose, image_side: int, supersample: int = 2, pose_index: int = 0
) -> PosedImage:
    """Ray-trace ``spec`` from ``pose``; ``supersample`` x ``supersample`` rays per pixel are box-filtered."""
    side = image_side * supersample
    rays = generate_rays(pose, side)
    rgb, _ = trace(spec, rays.origins, rays.directions)
    img = rgb.reshape(image_side, supersample, image_side, supersample, 3).mean(axis=(1, 3))
    return PosedImage(pose, img.astype(np.float32), spec.scene_id, pose_index)


def silhouette(spec: SceneSpec, pose: CameraPose, image_side: int) -> np.ndarray:
    """Boolean ``(side, side)`` mask of pixels whose centre ray hits geometry."""
    rays = generate_rays(pose, image_side)
    _, hit = trace(spec, rays.origins, rays.directions)
    return hit.reshape(image_side, image_side)


def sample_poses(n_poses: int, rng: np.random.Generator, radius: float = CAMERA_RADIUS) -> list[CameraPose]:
    """Cameras on a sphere looking at the origin, uniform azimuth, elevation in a band."""
    az = rng.uniform(0.0, 2 * np.pi, size=n_poses)
    lo, hi = np.deg2rad(ELEVATION_RANGE)
    el = rng.uniform(lo, hi, size=n_poses)
    eyes = radius * np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=1)
    return [CameraPose.look_at(e, field_of_view=FIELD_OF_VIEW) for e in eyes]


def pose_elevation(pose: CameraPose) -> float:
    t = pose.translation
    return float(np.arcsin(t[2] / np.linalg.norm(t)))


def split_poses(poses: list[CameraPose], rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """90/10 train/test split of pose indices.

    The lowest- and highest-elevation poses are always kept for training so
    that test elevations stay inside the training range.
    """
    n = len(poses)
    n_train = int(round(TRAIN_FRACTION * n))
    elev = np.array([pose_elevation(p) for p in poses])
    pinned = {int(np.argmin(elev)), int(np.argmax(elev))}
    candidates = np.array([i for i in rng.permutation(n) if i not in pinned])
    test = np.sort(candidates[: n - n_train])
    train = np.setdiff1d(np.arange(n), test)
    return train, test


@dataclass
class SceneDataset:
    specs: list[SceneSpec]
    poses: list[CameraPose]
    images: np.ndarray  # (n_scenes, n_poses, side, side, 3) float32
    train_idx: np.ndarray
    test_idx: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def scene_ids(self) -> list[int]:
        return [s.scene_id for s in self.specs]

    @property
    def image_side(self) -> int:
        return self.images.shape[2]

    def __len__(self) -> int:
        return len(self.specs)

    def posed_image(self, scene_index: int, pose_index: int) -> PosedImage:
        return PosedImage(
            self.poses[pose_index], self.images[scene_index, pose_index], self.specs[scene_index].scene_id, pose_index
        )

    def items(self, split: str = "train") -> list[tuple[int, int]]:
        """All ``(scene_index, pose_index)`` pairs of a split."""
        idx = {"train": self.train_idx, "test": self.test_idx, "all": np.arange(len(self.poses))}[split]
        return [(s, int(p)) for s in range(len(self.specs)) for p in idx]

    def subset(self, scene_indices) -> "SceneDataset":
        scene_indices = list(scene_indices)
        return SceneDataset(
            [self.specs[i] for i in scene_indices],
            self.poses,
            self.images[scene_indices],
            self.train_idx,
            self.test_idx,
            dict(self.meta),
        )


def make_dataset(
    n_scenes: int,
    n_poses: int = 200,
    image_side: int = 128,
    seed: int = 0,
    family_seed: int = 0,
    first_scene_id: int = 0,
    supersample: int = 2,
) -> SceneDataset:
    """Render ``n_scenes`` family members from a shared set of ``n_poses`` cameras."""
    if n_poses < 10:
        raise ValueError("n_poses must be >= 10")
    rng = np.random.default_rng([seed, 31337])
    poses = sample_poses(n_poses, rng)
    train, test = split_poses(poses, rng)
    specs = [generate_scene(first_scene_id + i, family_seed) for i in range(n_scenes)]
    images = np.empty((n_scenes, n_poses, image_side, image_side, 3), dtype=np.float32)
    for i, spec in enumerate(specs):
        for j, pose in enumerate(poses):
            images[i, j] = render_ground_truth(spec, pose, image_side, supersample).rgb
    meta = {"seed": seed, "family_seed": family_seed, "supersample": supersample}
    return SceneDataset(specs, poses, images, train, test, meta)


def merge_datasets(a: SceneDataset, b: SceneDataset) -> SceneDataset:
    """Concatenate the scenes of two datasets rendered from the same cameras."""
    if len(a.poses) != len(b.poses) or not np.array_equal(a.test_idx, b.test_idx):
        raise ValueError("datasets do not share cameras")
    return SceneDataset(a.specs + b.specs, a.poses, np.concatenate([a.images, b.images]), a.train_idx, a.test_idx, dict(a.meta))


# -- persistence ------------------------------------------------------------------
def save_dataset(ds: SceneDataset, path) -> Path:
    """Directory with ``split.json``, ``poses.json`` and per scene ``spec.json`` + PNG views."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / "poses.json").write_text(json.dumps([p.to_dict() for p in ds.poses], indent=1))
    split = {
        "train": ds.train_idx.tolist(),
        "test": ds.test_idx.tolist(),
        "scenes": ds.scene_ids,
        "image_side": ds.image_side,
        "meta": ds.meta,
    }
    (path / "split.json").write_text(json.dumps(split, indent=1))
    for i, spec in enumerate(ds.specs):
        sdir = path / f"scene_{spec.scene_id:05d}"
        sdir.mkdir(exist_ok=True)
        (sdir / "spec.json").write_text(json.dumps(spec.to_dict(), indent=1))
        for j in range(len(ds.poses)):
            save_png(ds.images[i, j], sdir / f"view_{j:04d}.png")
    return path


def load_dataset(path) -> SceneDataset:
    path = Path(path)
    split = json.loads((path / "split.json").read_text())
    poses = [CameraPose.from_dict(d) for d in json.loads((path / "poses.json").read_text())]
    specs, images = [], []
    for sid in split["scenes"]:
        sdir = path / f"scene_{sid:05d}"
        specs.append(SceneSpec.from_dict(json.loads((sdir / "spec.json").read_text())))
        images.append(np.stack([load_png(sdir / f"view_{j:04d}.png") for j in range(len(poses))]))
    return SceneDataset(
        specs, poses, np.stack(images), np.array(split["train"], dtype=np.int64), np.array(split["test"], dtype=np.int64), split.get("meta", {})
    )


def save_png(rgb: np.ndarray, path) -> None:
    Image.fromarray(np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)).save(path)


def load_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
