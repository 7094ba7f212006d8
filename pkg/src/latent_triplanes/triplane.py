"""Tri-Plane feature fields and the micro/macro composition.

A tri-plane is stored as one ``(3, R, R, C)`` tensor holding the xy, xz and
yz planes in that order. Scene coordinates live in the box ``[-1, 1]^3`` and
map linearly onto plane nodes (``-1`` and ``1`` are the corner nodes); points
outside the box are clamped to the edge.

Per scene, the renderer sees ``micro ⊕ macro`` along the channel axis, micro
channels first, where ``macro = Σ_i w_i B_i`` over the shared bank.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .tensor_core import Parameter, Tensor, concat, grid_sample_planes, stack

PLANE_AXES = ((0, 1), (0, 2), (1, 2))  # xy, xz, yz
INIT_STD = 0.1


@dataclass
class TriPlane:
    planes: Tensor  # (3, R, R, C)

    def __post_init__(self):
        if self.planes.ndim != 4 or self.planes.shape[0] != 3 or self.planes.shape[1] != self.planes.shape[2]:
            raise ValueError(f"tri-plane tensor must be (3, R, R, C), got {self.planes.shape}")

    @property
    def resolution(self) -> int:
        return self.planes.shape[1]

    @property
    def channels(self) -> int:
        return self.planes.shape[3]

    @property
    def xy(self) -> Tensor:
        return self.planes[0]

    @property
    def xz(self) -> Tensor:
        return self.planes[1]

    @property
    def yz(self) -> Tensor:
        return self.planes[2]

    @classmethod
    def constant(cls, resolution: int, channels: int, value: float) -> "TriPlane":
        return cls(Tensor(np.full((3, resolution, resolution, channels), value)))


@dataclass
class GlobalBank:
    """``M`` shared tri-planes stored as one ``(M, 3, R, R, F_mac)`` parameter."""

    bases: Parameter

    @property
    def M(self) -> int:
        return self.bases.shape[0]

    @property
    def resolution(self) -> int:
        return self.bases.shape[2]

    @property
    def channels(self) -> int:
        return self.bases.shape[4]

    def basis(self, i: int) -> TriPlane:
        return TriPlane(self.bases[i])

    @classmethod
    def random(cls, M: int, resolution: int, channels: int, rng: np.random.Generator, name: str = "bank") -> "GlobalBank":
        data = rng.normal(0.0, INIT_STD, size=(M, 3, resolution, resolution, channels))
        return cls(Parameter(data, name=name))


@dataclass
class SceneEntry:
    """Per-scene state: micro planes (``None`` when F_mic = 0) and bank coefficients (``None`` when M = 0)."""

    scene_id: int
    micro: Parameter | None
    coeffs: Parameter | None

    def parameters(self) -> Iterator[Parameter]:
        if self.micro is not None:
            yield self.micro
        if self.coeffs is not None:
            yield self.coeffs

    @property
    def micro_channels(self) -> int:
        return 0 if self.micro is None else self.micro.shape[3]

    @classmethod
    def random(
        cls, scene_id: int, resolution: int, f_mic: int, M: int, rng: np.random.Generator, prefix: str = "scene"
    ) -> "SceneEntry":
        micro = None
        if f_mic > 0:
            micro = Parameter(
                rng.normal(0.0, INIT_STD, size=(3, resolution, resolution, f_mic)), name=f"{prefix}/{scene_id}/micro"
            )
        coeffs = Parameter(np.full(M, 1.0 / M), name=f"{prefix}/{scene_id}/coeffs") if M > 0 else None
        return cls(scene_id, micro, coeffs)


def _check_entry(entry: SceneEntry, bank: GlobalBank | None) -> None:
    M = 0 if bank is None else bank.M
    n = 0 if entry.coeffs is None else entry.coeffs.shape[0]
    if n != M:
        raise ValueError(f"scene {entry.scene_id}: {n} coefficients but bank holds {M} bases")
    if entry.micro is None and bank is None:
        raise ValueError(f"scene {entry.scene_id} has neither micro planes nor a bank")
    if entry.micro is not None and bank is not None and entry.micro.shape[1] != bank.resolution:
        raise ValueError("micro planes and bank disagree on resolution")


def macro_planes(coeffs: Tensor, bank: GlobalBank) -> Tensor:
    """Weighted bank sum. ``coeffs`` is ``(M,)`` or ``(B, M)``; returns ``(3,R,R,F)`` or ``(B,3,R,R,F)``."""
    flat = bank.bases.reshape(bank.M, -1)
    tail = bank.bases.shape[1:]
    if coeffs.ndim == 1:
        return (coeffs.reshape(1, bank.M) @ flat).reshape(tail)
    return (coeffs @ flat).reshape((coeffs.shape[0],) + tail)


def compose_micro_macro(entry: SceneEntry, bank: GlobalBank | None) -> TriPlane:
    """Build the scene tri-plane ``micro ⊕ Σ_i w_i B_i`` (micro channels first)."""
    _check_entry(entry, bank)
    parts = []
    if entry.micro is not None:
        parts.append(entry.micro)
    if bank is not None:
        parts.append(macro_planes(entry.coeffs, bank))
    return TriPlane(parts[0] if len(parts) == 1 else concat(parts, axis=-1))


def compose_batch(entries: Sequence[SceneEntry], bank: GlobalBank | None) -> Tensor:
    """Compose several scenes at once; returns a ``(B, 3, R, R, F)`` tensor."""
    for e in entries:
        _check_entry(e, bank)
    parts = []
    if entries[0].micro is not None:
        parts.append(stack([e.micro for e in entries]))
    if bank is not None:
        parts.append(macro_planes(stack([e.coeffs for e in entries]), bank))
    return parts[0] if len(parts) == 1 else concat(parts, axis=-1)


def _plane_uv(points) -> Tensor:
    """(B, N, 3) points -> (B, 3, N, 2) plane coordinates (xy, xz, yz)."""
    if isinstance(points, Tensor) and points.requires_grad:
        return stack([points[..., list(ax)] for ax in PLANE_AXES], axis=1)
    pts = points.data if isinstance(points, Tensor) else np.asarray(points)
    return Tensor(np.stack([pts[..., list(ax)] for ax in PLANE_AXES], axis=1))


def query_planes(planes: Tensor, points) -> Tensor:
    """Batched tri-plane query.

    Args:
        planes: ``(B, 3, R, R, C)`` stacked scene tri-planes.
        points: ``(B, N, 3)`` coordinates; a tracked ``Tensor`` receives gradients.

    Returns:
        ``(B, N, C)``: per point, the sum of the three bilinearly interpolated plane features.
    """
    B, _, R, _, C = planes.shape
    uv = _plane_uv(points)
    N = uv.shape[2]
    if uv.dtype != planes.dtype:
        uv = Tensor(uv.data.astype(planes.dtype)) if not uv.requires_grad else uv
    feats = grid_sample_planes(planes.reshape(B * 3, R, R, C), uv.reshape(B * 3, N, 2))
    return feats.reshape(B, 3, N, C).sum(axis=1)


def query_triplane(tp: TriPlane, points) -> Tensor:
    """Query one tri-plane at ``(N, 3)`` points; returns ``(N, C)``."""
    if isinstance(points, Tensor):
        pts = points.reshape(1, *points.shape)
    else:
        pts = np.asarray(points)[None]
    planes = tp.planes.reshape(1, *tp.planes.shape)
    out = query_planes(planes, pts)
    return out.reshape(out.shape[1:])


def trainable_params_per_scene(plane_resolution: int, f_mic: int, M: int) -> int:
    """Scalars learned per scene: micro planes plus bank coefficients."""
    if plane_resolution <= 0 or f_mic < 0 or M < 0:
        raise ValueError("plane_resolution must be positive and f_mic, M non-negative")
    return 3 * plane_resolution**2 * f_mic + M
