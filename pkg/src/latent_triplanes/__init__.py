"""Tri-plane scene fitting in the latent space of a jointly trained autoencoder.

Submodules:

``tensor_core``      numpy reverse-mode autodiff, optimizers, gradient checks
``triplane``         tri-planes, the shared plane bank and micro/macro composition
``volume_renderer``  cameras, rays, stratified sampling, compositing, the renderer head
``latent_ae``        the convolutional autoencoder
``training``         losses, caching, joint training and exploitation loops
``scenes``           procedural scenes, ground-truth rendering, datasets
``costs_metrics``    PSNR and the time/memory cost model
``checkpoint``       manifest + raw payload checkpoint directories
``config``, ``pipeline``, ``cli``  run configuration and command-line stages
"""

__version__ = "0.1.0"
