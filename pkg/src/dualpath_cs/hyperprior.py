"""Hyperprior learning branch.

From the secondary measurement stream y1 this produces
  - signal guidance: refined estimate features plus its data-fidelity
    gradient map, and
  - gradient guidance: a block-constant binary mask over the top fraction of
    blocks ranked by mean absolute gradient, and a per-pixel confidence map in
    the open interval (1, 2).

The mask path is deliberately not differentiated through: top-K selection is
treated as a constant during backward.
"""

from dataclasses import dataclass

import numpy as np

from . import ops
from .autograd import Tensor
from .errors import GeometryError
from .nn import Conv2d, Module, SpatialGate
from .sampling import data_grad

SOFT_LOGIT_LIMIT = 12.0


@dataclass
class HyperpriorSignal:
    """Content guidance: features of the refined estimate and its gradient map."""

    features: Tensor
    grad_map: Tensor
    refined: Tensor


@dataclass
class GuidanceBundle:
    """Structural guidance: hard block mask and soft confidence map."""

    hard_mask: Tensor
    soft_map: Tensor
    topk_fraction: float


class ResidualBlock(Module):
    def __init__(self, channels, rng):
        self.conv1 = Conv2d(channels, channels, 3, rng)
        self.conv2 = Conv2d(channels, channels, 3, rng)

    def forward(self, x):
        return ops.add(x, self.conv2(ops.relu(self.conv1(x))))


class RefinementNet(Module):
    """Coarse-estimate refiner: head conv, residual stack, tail with global skip."""

    def __init__(self, channels, rng, depth=2):
        self.head = Conv2d(1, channels, 3, rng)
        self.blocks = [ResidualBlock(channels, rng) for _ in range(depth)]
        self.tail = Conv2d(channels, 1, 3, rng)

    def forward(self, x):
        feats = self.head(x)
        for block in self.blocks:
            feats = block(feats)
        refined = ops.add(x, self.tail(feats))
        return refined, feats


class SoftMapNet(Module):
    """Confidence map 1 + sigmoid(conv(gelu(conv(SA(proj(grad)))))) in (1, 2).

    The pre-sigmoid logit is clamped to +-SOFT_LOGIT_LIMIT so float32
    saturation can never push the output onto the interval boundary.
    """

    def __init__(self, channels, rng):
        self.proj = Conv2d(1, channels, 3, rng)
        self.spatial = SpatialGate(rng)
        self.mix = Conv2d(channels, channels, 3, rng)
        self.out = Conv2d(channels, 1, 3, rng)

    def forward(self, grad_map):
        feats = self.spatial(self.proj(grad_map))
        logit = self.out(ops.gelu(self.mix(feats)))
        logit = ops.clip(logit, -SOFT_LOGIT_LIMIT, SOFT_LOGIT_LIMIT)
        return ops.add(ops.sigmoid(logit), 1.0)


def block_mean_abs_grad(grad_map, block_size):
    """Mean absolute gradient per block, row-major block order (plain array).

    Feeds only the non-differentiable mask path, so it works on raw values.
    """
    arr = grad_map.data if isinstance(grad_map, Tensor) else np.asarray(grad_map)
    arr = arr.reshape(arr.shape[-2], arr.shape[-1])
    h, w = arr.shape
    b = block_size
    if h % b or w % b:
        raise GeometryError(f"extents {h}x{w} not divisible by block size {b}")
    tiles = np.abs(arr).reshape(h // b, b, w // b, b)
    return tiles.mean(axis=(1, 3)).reshape(-1)


def build_hard_mask(block_scores, rho, block_size, hw):
    """Binary pixel mask selecting ceil(rho * num_blocks) top-scoring blocks.

    Ties break toward the lower block index (stable ordering); the result is
    constant within each block and constant to the tape.
    """
    h, w = hw
    nb_h, nb_w = h // block_size, w // block_size
    nb = nb_h * nb_w
    if block_scores.shape != (nb,):
        raise GeometryError(f"expected {nb} block scores for {h}x{w}, got {block_scores.shape}")
    k = int(np.ceil(rho * nb))
    order = np.argsort(-block_scores, kind="stable")
    flags = np.zeros(nb, dtype=block_scores.dtype)
    flags[order[:k]] = 1.0
    mask = np.kron(flags.reshape(nb_h, nb_w), np.ones((block_size, block_size), dtype=flags.dtype))
    return Tensor(mask.reshape(1, 1, h, w))


class HyperpriorBranch(Module):
    """Full branch: adjoint back-projection, refinement, guidance generation."""

    def __init__(self, channels, rho, block_size, rng, depth=2):
        self.refiner = RefinementNet(channels, rng, depth=depth)
        self.soft_net = SoftMapNet(channels, rng)
        self.rho = rho
        self.block_size = block_size

    def forward(self, y1, sampler, hw):
        coarse = sampler.phi1.adjoint(y1, hw)
        refined, feats = self.refiner(coarse)
        grad_map = data_grad(sampler.phi1, refined, y1, hw)
        scores = block_mean_abs_grad(grad_map, self.block_size)
        hard = build_hard_mask(scores, self.rho, self.block_size, hw)
        soft = self.soft_net(grad_map)
        signal = HyperpriorSignal(features=feats, grad_map=grad_map, refined=refined)
        guidance = GuidanceBundle(hard_mask=hard, soft_map=soft, topk_fraction=self.rho)
        return signal, guidance
