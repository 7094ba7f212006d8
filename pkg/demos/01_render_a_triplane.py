"""Render a homogeneous medium and watch the quadrature converge.

A tri-plane whose head ignores its input is a slab of constant density and
constant emission. Along a ray of length L its rendered value has the closed
form ``c * (1 - exp(-sigma * L))``, so the stratified quadrature can be
compared against it as the sample count grows.

    python demos/01_render_a_triplane.py
"""

import math

import numpy as np

from latent_triplanes.tensor_core import Parameter, precision
from latent_triplanes.triplane import TriPlane
from latent_triplanes.volume_renderer import CameraPose, RendererHead, generate_rays, render_image, render_ray

sigma, color = 1.3, np.array([0.7, 0.2, 0.4])

# A head with zero weights: its output is the last bias, i.e. (softplus^-1(sigma), color).
hidden = 4
zeros = [np.zeros((2, hidden)), np.zeros((1, hidden)), np.zeros((hidden, hidden)), np.zeros((1, hidden)), np.zeros((hidden, 4))]
bias = np.concatenate([[math.log(math.expm1(sigma))], color])[None]
head = RendererHead(2, 3, hidden, "identity", [Parameter(z) for z in zeros] + [Parameter(bias)])
planes = TriPlane.constant(8, 2, 0.0)

near, far = 0.5, 3.5
ray = generate_rays(CameraPose.look_at([0.0, 0.0, 2.0]), 1, near, far)
expected = color * (1 - math.exp(-sigma * (far - near)))
print(f"closed form: {np.round(expected, 6)}")
with precision(np.float64):
    for n in (4, 16, 64, 256):
        value, _ = render_ray(planes, head, ray, n)
        print(f"{n:4d} samples -> max abs error {np.abs(value.data.ravel() - expected).max():.2e}")

# The same machinery renders whole images; a random head gives a smooth, view-dependent field.
rng = np.random.default_rng(0)
field = TriPlane(Parameter(rng.normal(0, 0.5, size=(3, 16, 16, 6))))
img = render_image(field, RendererHead.random(6, 3, rng, emission="sigmoid"), CameraPose.look_at([1.5, 1.5, 1.2]), 32).data
print(f"random field image: shape {img.shape}, range [{img.min():.3f}, {img.max():.3f}]")
