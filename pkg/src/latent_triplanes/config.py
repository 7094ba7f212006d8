"""Run configuration: defaults, JSON loading, flag overrides and ablation remapping."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .latent_ae import AEConfig
from .training import LossWeights, StageSchedule

MODES = ("ours", "ours-micro", "ours-macro", "triplanes-rgb", "triplanes-macro-rgb", "ours-no-prior")
RGB_MODES = ("triplanes-rgb", "triplanes-macro-rgb")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data
    n_train: int = 8
    n_exploit: int = 16
    n_poses: int = 50
    image_side: int = 64
    latent_side: int = 8
    supersample: int = 2
    family_seed: int = 0
    # autoencoder
    latent_channels: int = 4
    ae_widths: list = field(default_factory=lambda: [32, 64, 64])
    ae_steps: int = 5000
    ae_batch: int = 8
    ae_lr: float = 3e-3
    # scene representation
    plane_resolution: int = 32
    f_mic: int = 10
    f_mac: int = 22
    M: int = 8
    head_hidden: int = 64
    n_samples: int = 32
    rgb_rays_per_image: int = 256
    # schedule
    warmup_steps: int = 200
    steps: int = 400
    exploit_steps: int = 400
    finetune_steps: int = 100
    batch_size: int = 4
    lr_planes: float = 1e-2
    lr_head: float = 2e-3
    lr_ae: float = 2e-4
    # loss weights
    lambda_ae: float = 1.0
    lambda_enc: float = 1.0
    lambda_dec: float = 1.0
    t_mix: float = 0.5
    # run
    mode: str = "ours"
    seed: int = 0
    freeze_bank_in_exploit: bool = False
    deterministic: bool = False
    profile: str = "desk"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.f_mic < 0 or self.f_mac < 0 or self.f_mic + self.f_mac <= 0:
            raise ConfigError("need f_mic, f_mac >= 0 and f_mic + f_mac > 0")
        if self.f_mac > 0 and self.M < 1:
            raise ConfigError("f_mac > 0 requires M >= 1")
        for name in ("n_train", "n_exploit", "image_side", "plane_resolution", "n_samples", "batch_size", "latent_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n_poses < 10:
            raise ConfigError("n_poses must be >= 10")
        for name in ("ae_steps", "warmup_steps", "steps", "exploit_steps", "finetune_steps"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        try:
            self.ae_config()
            self.weights()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.image_side % self.latent_side:
            raise ConfigError(f"latent_side {self.latent_side} does not divide image_side {self.image_side}")

    @property
    def downsample_factor(self) -> int:
        return self.image_side // self.latent_side

    @property
    def is_rgb(self) -> bool:
        return self.mode in RGB_MODES

    def ae_config(self) -> AEConfig:
        return AEConfig(self.downsample_factor, self.latent_channels, tuple(self.ae_widths))

    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_ae, self.lambda_enc, self.lambda_dec, self.t_mix)

    def schedule(self) -> StageSchedule:
        return StageSchedule(
            warmup_steps=self.warmup_steps,
            steps=self.steps,
            exploit_steps=self.exploit_steps,
            finetune_steps=self.finetune_steps,
            batch_size=self.batch_size,
            lr_planes=self.lr_planes,
            lr_head=self.lr_head,
            lr_ae=self.lr_ae,
            n_samples=self.n_samples,
        )

    def features(self) -> tuple[int, int, int]:
        """``(f_mic, f_mac, M)`` after the ablation mode is applied."""
        F = self.f_mic + self.f_mac
        if self.mode in ("ours-micro", "triplanes-rgb"):
            return F, 0, 0
        if self.mode in ("ours-macro", "triplanes-macro-rgb"):
            return 0, F, self.M
        return self.f_mic, self.f_mac, self.M

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config fields: {unknown}")
        base = PROFILES.get(data.get("profile", "desk"))
        if base is None:
            raise ConfigError(f"unknown profile {data.get('profile')!r}")
        merged = {**base, **data}
        try:
            return cls(**merged)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def replace(self, **overrides) -> "RunConfig":
        return RunConfig.from_dict({**self.to_dict(), **overrides})


PROFILES = {
    "desk": {},
    "full": {
        "n_train": 500,
        "n_exploit": 1000,
        "n_poses": 200,
        "image_side": 128,
        "latent_side": 16,
        "plane_resolution": 64,
        "f_mic": 10,
        "f_mac": 22,
        "M": 50,
        "n_samples": 64,
        "profile": "full",
    },
}


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the JSON file at ``path``, then non-None ``overrides``."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig.from_dict(data)


def code_hash() -> str:
    """SHA-1 over the package sources, in the style of a git blob id of their concatenation."""
    root = Path(__file__).parent
    blob = b"".join(p.read_bytes() for p in sorted(root.glob("*.py")))
    return hashlib.sha1(b"blob %d\0" % len(blob) + blob).hexdigest()
