"""Small convolutional autoencoder that defines the latent image space.

The encoder applies ``log2(downsample_factor)`` stride-2 convolutions with
leaky ReLU (slope 0.1), then a 3x3 projection to ``latent_channels``. The decoder mirrors it with
transposed convolutions and ends in a sigmoid so outputs stay in [0, 1].

Images are ``(B, H, W, 3)`` arrays/tensors in channel-last layout; latents
are ``(B, h, w, C_lat)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .tensor_core import Parameter, Tensor, conv2d, conv_transpose2d, mse

# Plain ReLU units die early in training here and cap reconstruction quality.
LEAK = 0.1


@dataclass
class AEConfig:
    downsample_factor: int = 8
    latent_channels: int = 4
    widths: tuple = (32, 64, 64)

    def __post_init__(self):
        f = self.downsample_factor
        if f < 1 or f & (f - 1):
            raise ValueError(f"downsample_factor must be a power of two, got {f}")
        self.widths = tuple(self.widths)
        if len(self.widths) != self.n_stages:
            raise ValueError(f"need {self.n_stages} stage widths for factor {f}, got {len(self.widths)}")

    @property
    def n_stages(self) -> int:
        return int(np.log2(self.downsample_factor))


@dataclass
class PosedImage:
    pose: object  # CameraPose
    rgb: np.ndarray  # (side, side, 3) in [0, 1]
    scene_id: int
    pose_index: int = 0


@dataclass
class LatentImage:
    data: np.ndarray  # (side / factor, side / factor, C_lat)
    pose: object
    scene_id: int
    pose_index: int = 0


def _conv_param(rng, c_out, c_in, k, name, transposed=False):
    fan_in = c_in * k * k
    shape = (c_in, c_out, k, k) if transposed else (c_out, c_in, k, k)
    w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return Parameter(w, name=f"{name}.w"), Parameter(np.zeros(c_out), name=f"{name}.b")


@dataclass
class Encoder:
    config: AEConfig
    layers: list = field(default_factory=list)  # [(w, b, stride, padding)]

    @classmethod
    def random(cls, config: AEConfig, rng: np.random.Generator, prefix: str = "encoder") -> "Encoder":
        layers = []
        c_in = 3
        for i, width in enumerate(config.widths):
            w, b = _conv_param(rng, width, c_in, 4, f"{prefix}/down{i}")
            layers.append((w, b, 2, 1))
            c_in = width
        w, b = _conv_param(rng, config.latent_channels, c_in, 3, f"{prefix}/proj")
        layers.append((w, b, 1, 1))
        return cls(config, layers)

    def parameters(self) -> Iterator[Parameter]:
        for w, b, _, _ in self.layers:
            yield w
            yield b

    def __call__(self, images) -> Tensor:
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images))
        if x.ndim != 4 or x.shape[-1] != 3:
            raise ValueError(f"encoder expects (B, H, W, 3) images, got {x.shape}")
        f = self.config.downsample_factor
        if x.shape[1] % f or x.shape[2] % f:
            raise ValueError(f"image side {x.shape[1:3]} is not divisible by {f}")
        h = x.transpose(0, 3, 1, 2)
        last = len(self.layers) - 1
        for i, (w, b, s, p) in enumerate(self.layers):
            h = conv2d(h, w, b, stride=s, padding=p)
            if i != last:
                h = h.leaky_relu(LEAK)
        return h.transpose(0, 2, 3, 1)


@dataclass
class Decoder:
    config: AEConfig
    layers: list = field(default_factory=list)  # [(w, b, stride, padding, transposed)]

    @classmethod
    def random(cls, config: AEConfig, rng: np.random.Generator, prefix: str = "decoder") -> "Decoder":
        widths = list(reversed(config.widths))
        layers = []
        w, b = _conv_param(rng, widths[0], config.latent_channels, 3, f"{prefix}/proj")
        layers.append((w, b, 1, 1, False))
        for i in range(len(widths)):
            c_in = widths[i]
            c_out = widths[i + 1] if i + 1 < len(widths) else 3
            w, b = _conv_param(rng, c_out, c_in, 4, f"{prefix}/up{i}", transposed=True)
            layers.append((w, b, 2, 1, True))
        return cls(config, layers)

    def parameters(self) -> Iterator[Parameter]:
        for w, b, *_ in self.layers:
            yield w
            yield b

    def __call__(self, latents) -> Tensor:
        z = latents if isinstance(latents, Tensor) else Tensor(np.asarray(latents))
        if z.ndim != 4 or z.shape[-1] != self.config.latent_channels:
            raise ValueError(f"decoder expects (B, h, w, {self.config.latent_channels}) latents, got {z.shape}")
        h = z.transpose(0, 3, 1, 2)
        last = len(self.layers) - 1
        for i, (w, b, s, p, transposed) in enumerate(self.layers):
            op = conv_transpose2d if transposed else conv2d
            h = op(h, w, b, stride=s, padding=p)
            h = h.sigmoid() if i == last else h.leaky_relu(LEAK)
        return h.transpose(0, 2, 3, 1)


@dataclass
class Autoencoder:
    config: AEConfig
    encoder: Encoder
    decoder: Decoder

    @classmethod
    def random(cls, config: AEConfig | None = None, seed: int = 0) -> "Autoencoder":
        config = config or AEConfig()
        rng = np.random.default_rng(seed)
        return cls(config, Encoder.random(config, rng), Decoder.random(config, rng))

    def parameters(self) -> Iterator[Parameter]:
        yield from self.encoder.parameters()
        yield from self.decoder.parameters()

    def latent_side(self, image_side: int) -> int:
        f = self.config.downsample_factor
        if image_side % f:
            raise ValueError(f"image side {image_side} is not divisible by {f}")
        return image_side // f


def encode(x, encoder: Encoder):
    """Encode images.

    A ``(B, H, W, 3)`` array or tensor gives a ``(B, h, w, C_lat)`` tensor that
    stays on the autodiff graph; a :class:`PosedImage` gives a :class:`LatentImage`.
    """
    if isinstance(x, PosedImage):
        z = encoder(Tensor(x.rgb[None].astype(encoder.layers[0][0].dtype)))
        return LatentImage(z.data[0], x.pose, x.scene_id, x.pose_index)
    return encoder(x)


def decode(z, decoder: Decoder) -> Tensor:
    """Decode ``(B, h, w, C_lat)`` latents (or one :class:`LatentImage`) to ``(B, H, W, 3)`` images."""
    if isinstance(z, LatentImage):
        return decoder(Tensor(z.data[None].astype(decoder.layers[0][0].dtype)))
    return decoder(z)


def ae_loss(x, x_hat) -> Tensor:
    """Mean squared reconstruction error over all pixels and channels."""
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=x_hat.dtype if isinstance(x_hat, Tensor) else None))
    return mse(x_hat if isinstance(x_hat, Tensor) else Tensor(np.asarray(x_hat)), x)
