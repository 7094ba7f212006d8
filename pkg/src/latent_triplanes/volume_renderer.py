"""Differentiable volume rendering of tri-plane feature fields.

Rays are cast through pixel centres of a pinhole camera. Along each ray,
``n_samples`` points are drawn (one per equal-width bin, jittered when an
rng is given, bin midpoints otherwise), the tri-plane is queried, and a small
MLP head maps the summed features to a density (softplus) and an emission.
The emission is alpha-composited with

    w_i = T_i (1 - exp(-σ_i δ_i)),   T_i = exp(-Σ_{j<i} σ_j δ_j),

where ``δ_i = t_{i+1} - t_i`` and the last interval runs to ``far``. The
leftover transmittance ``1 - Σ w_i`` shows a constant background vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .tensor_core import Parameter, Tensor
from .triplane import TriPlane, query_planes

ORTHO_TOL = 1e-6
SCENE_HALF_DIAG = float(np.sqrt(3.0))


class RayCounter:
    """Counts rays handed to the renderer (instrumentation only)."""

    def __init__(self):
        self.count = 0

    def add(self, n: int) -> None:
        self.count += int(n)

    def reset(self) -> None:
        self.count = 0


ray_counter = RayCounter()


@dataclass
class CameraPose:
    """Camera-to-world rotation (columns: right, up, backward), centre, and vertical field of view."""

    rotation: np.ndarray
    translation: np.ndarray
    field_of_view: float = float(np.deg2rad(45.0))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    def is_orthonormal(self, tol: float = ORTHO_TOL) -> bool:
        R = self.rotation
        return bool(np.max(np.abs(R @ R.T - np.eye(3))) <= tol)

    def to_dict(self) -> dict:
        return {
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "field_of_view": float(self.field_of_view),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        return cls(np.array(d["rotation"]), np.array(d["translation"]), float(d["field_of_view"]))

    @classmethod
    def look_at(cls, eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0), field_of_view=np.deg2rad(45.0)) -> "CameraPose":
        eye = np.asarray(eye, dtype=np.float64)
        back = eye - np.asarray(target, dtype=np.float64)
        back /= np.linalg.norm(back)
        right = np.cross(np.asarray(up, dtype=np.float64), back)
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(np.array([0.0, 1.0, 0.0]), back)
        right /= np.linalg.norm(right)
        cam_up = np.cross(back, right)
        return cls(np.stack([right, cam_up, back], axis=1), eye, float(field_of_view))


@dataclass
class RayBatch:
    origins: np.ndarray  # (N, 3)
    directions: np.ndarray  # (N, 3), unit length
    near: float
    far: float

    def __post_init__(self):
        if not self.near < self.far:
            raise ValueError(f"near ({self.near}) must be < far ({self.far})")

    def __len__(self) -> int:
        return self.origins.shape[0]


def default_near_far(pose: CameraPose) -> tuple[float, float]:
    """Depth range that covers the [-1, 1]^3 scene box from this camera."""
    d = float(np.linalg.norm(pose.translation))
    return max(0.05, d - SCENE_HALF_DIAG), d + SCENE_HALF_DIAG


def generate_rays(pose: CameraPose, image_side: int, near: float | None = None, far: float | None = None) -> RayBatch:
    """One ray per pixel centre, row-major from the top-left pixel."""
    if image_side < 1:
        raise ValueError("image_side must be >= 1")
    if not pose.is_orthonormal():
        raise ValueError("camera rotation is not orthonormal")
    if near is None or far is None:
        dn, df = default_near_far(pose)
        near = dn if near is None else near
        far = df if far is None else far
    half = np.tan(0.5 * pose.field_of_view)
    c = (np.arange(image_side) + 0.5) / image_side * 2.0 - 1.0
    xs = c * half
    ys = -c * half
    X, Y = np.meshgrid(xs, ys)  # rows follow y (top row first), columns follow x
    d_cam = np.stack([X, Y, -np.ones_like(X)], axis=-1).reshape(-1, 3)
    d = d_cam @ pose.rotation.T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(pose.translation, d.shape).copy()
    return RayBatch(o, d, float(near), float(far))


def sample_depths(n_rays: int, near: float, far: float, n_samples: int, rng: np.random.Generator | None = None):
    """Stratified depths ``(n_rays, n_samples)`` and their interval lengths."""
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    width = (far - near) / n_samples
    edges = near + width * np.arange(n_samples)
    if rng is None:
        offs = np.full((n_rays, n_samples), 0.5)
    else:
        offs = rng.random((n_rays, n_samples))
    t = edges[None, :] + offs * width
    delta = np.empty_like(t)
    delta[:, :-1] = t[:, 1:] - t[:, :-1]
    delta[:, -1] = far - t[:, -1]
    return t, delta


@dataclass
class RendererHead:
    """MLP ``features -> (density, emission)`` with two hidden ReLU layers."""

    in_features: int
    out_features: int
    hidden: int = 64
    emission: str = "identity"  # or "sigmoid" for RGB fields
    params: list[Parameter] = field(default_factory=list)

    @classmethod
    def random(
        cls,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        hidden: int = 64,
        emission: str = "identity",
        density_bias: float = -2.0,
        prefix: str = "head",
    ) -> "RendererHead":
        def lin(n_in, n_out, name):
            w = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out))
            return Parameter(w, name=f"{prefix}/{name}.w"), Parameter(np.zeros((1, n_out)), name=f"{prefix}/{name}.b")

        w1, b1 = lin(in_features, hidden, "l1")
        w2, b2 = lin(hidden, hidden, "l2")
        w3, b3 = lin(hidden, 1 + out_features, "l3")
        w3.data *= 0.1
        b3.data[0, 0] = density_bias
        return cls(in_features, out_features, hidden, emission, [w1, b1, w2, b2, w3, b3])

    def parameters(self) -> Iterator[Parameter]:
        return iter(self.params)

    def __call__(self, feats: Tensor) -> tuple[Tensor, Tensor]:
        w1, b1, w2, b2, w3, b3 = self.params
        h = (feats @ w1 + b1).relu()
        h = (h @ w2 + b2).relu()
        out = h @ w3 + b3
        sigma = out[:, 0].softplus()
        emit = out[:, 1:]
        if self.emission == "sigmoid":
            emit = emit.sigmoid()
        return sigma, emit


def composite(sigma: Tensor, emit: Tensor, delta: np.ndarray, background=None):
    """Alpha-composite ``(..., S)`` densities and ``(..., S, C)`` emissions.

    Returns ``(feature (..., C), opacity (...), weights (..., S))``.
    """
    sd = sigma * Tensor(delta.astype(sigma.dtype))
    trans = (-sd.cumsum(axis=-1, exclusive=True)).exp()
    alpha = 1.0 - (-sd).exp()
    weights = trans * alpha
    opacity = weights.sum(axis=-1)
    feature = (weights.reshape(*weights.shape, 1) * emit).sum(axis=-2)
    if background is not None:
        bg = np.asarray(background, dtype=sigma.dtype)
        if np.any(bg != 0):
            feature = feature + (1.0 - opacity).reshape(*opacity.shape, 1) * Tensor(bg)
    return feature, opacity, weights


def render_rays(
    planes: Tensor,
    head: RendererHead,
    origins: np.ndarray,
    directions: np.ndarray,
    near: float,
    far: float,
    n_samples: int,
    rng: np.random.Generator | None = None,
    background=None,
):
    """Render ``(B, N)`` rays through ``(B, 3, R, R, C)`` scene planes.

    Returns ``(features (B, N, C_out), opacity (B, N), weights (B, N, S))``.
    """
    B, N = origins.shape[:2]
    ray_counter.add(B * N)
    t, delta = sample_depths(B * N, near, far, n_samples, rng)
    t = t.reshape(B, N, n_samples)
    pts = origins[:, :, None, :] + t[..., None] * directions[:, :, None, :]
    pts = pts.reshape(B, N * n_samples, 3).astype(planes.dtype)
    feats = query_planes(planes, pts)  # (B, N*S, C)
    sigma, emit = head(feats.reshape(B * N * n_samples, planes.shape[-1]))
    sigma = sigma.reshape(B, N, n_samples)
    emit = emit.reshape(B, N, n_samples, head.out_features)
    return composite(sigma, emit, delta.reshape(B, N, n_samples), background)


def render_ray(tp: TriPlane, head: RendererHead, ray: RayBatch, n_samples: int, rng=None, background=None):
    """Render the rays of ``ray`` (usually one) through a single tri-plane.

    Returns ``(feature, opacity)``; for a one-ray batch these are ``(C_out,)`` and a scalar.
    """
    planes = tp.planes.reshape(1, *tp.planes.shape)
    feat, opac, _ = render_rays(
        planes, head, ray.origins[None], ray.directions[None], ray.near, ray.far, n_samples, rng, background
    )
    if len(ray) == 1:
        return feat.reshape(head.out_features), opac.reshape(())
    return feat.reshape(len(ray), head.out_features), opac.reshape(len(ray))


def render_batch(
    planes: Tensor,
    head: RendererHead,
    poses: Sequence[CameraPose],
    image_side: int,
    n_samples: int,
    rng: np.random.Generator | None = None,
    background=None,
    near: float | None = None,
    far: float | None = None,
) -> Tensor:
    """Render one image per (scene planes, pose) pair; returns ``(B, side, side, C_out)``.

    All poses must share a depth range (true for cameras on a fixed-radius sphere).
    """
    rays = [generate_rays(p, image_side, near, far) for p in poses]
    origins = np.stack([r.origins for r in rays])
    dirs = np.stack([r.directions for r in rays])
    feat, _, _ = render_rays(planes, head, origins, dirs, rays[0].near, rays[0].far, n_samples, rng, background)
    return feat.reshape(len(poses), image_side, image_side, head.out_features)


def render_image(
    tp: TriPlane,
    head: RendererHead,
    pose: CameraPose,
    image_side: int,
    n_samples: int = 48,
    rng=None,
    background=None,
) -> Tensor:
    """Render a ``(side, side, C_out)`` image of one tri-plane."""
    planes = tp.planes.reshape(1, *tp.planes.shape)
    img = render_batch(planes, head, [pose], image_side, n_samples, rng, background)
    return img.reshape(image_side, image_side, head.out_features)


__all__ = [
    "CameraPose",
    "RayBatch",
    "RendererHead",
    "RayCounter",
    "ray_counter",
    "generate_rays",
    "default_near_far",
    "sample_depths",
    "composite",
    "render_rays",
    "render_ray",
    "render_batch",
    "render_image",
]
