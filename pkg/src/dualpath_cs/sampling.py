"""Block-based dual compressive sampling.

An image is split into non-overlapping BxB blocks (row-major); each block is
flattened row-major and measured by two learnable per-block matrices whose row
counts split the measurement budget round(gamma * B^2) in a configured ratio.
"""

import numpy as np

from . import ops
from .autograd import Tensor, default_dtype
from .errors import ConfigError, DimensionError, GeometryError
from .nn import Module, Parameter


def round_half_up(x):
    return int(np.floor(x + 0.5))


def blockify(x, block_size):
    """[1,1,H,W] -> [num_blocks, B*B], blocks in row-major order (differentiable)."""
    if x.ndim != 4 or x.shape[0] != 1 or x.shape[1] != 1:
        raise DimensionError(f"blockify expects [1,1,H,W], got {x.shape}")
    _, _, h, w = x.shape
    b = block_size
    if h % b or w % b:
        raise GeometryError(f"extents {h}x{w} not divisible by block size {b}")
    grid = ops.reshape(x, (h // b, b, w // b, b))
    grid = ops.transpose(grid, (0, 2, 1, 3))
    return ops.reshape(grid, ((h // b) * (w // b), b * b))


def unblockify(blocks, block_size, hw):
    """Inverse of :func:`blockify` for a target (H, W)."""
    h, w = hw
    b = block_size
    nb = (h // b) * (w // b)
    if blocks.shape != (nb, b * b):
        raise DimensionError(f"expected [{nb},{b * b}] blocks for {h}x{w}, got {blocks.shape}")
    grid = ops.reshape(blocks, (h // b, w // b, b, b))
    grid = ops.transpose(grid, (0, 2, 1, 3))
    return ops.reshape(grid, (1, 1, h, w))


class BlockSensingMatrix(Module):
    """One learnable per-block sensing matrix of shape [rows, B*B]."""

    def __init__(self, rows, block_size, weights):
        if not (1 <= rows <= block_size * block_size):
            raise ConfigError(f"rows must lie in [1, B^2], got {rows} for B={block_size}")
        self.rows = rows
        self.block_size = block_size
        self.weights = Parameter(weights)

    def apply(self, x):
        """Measure an image: returns per-block measurement vectors [num_blocks, rows]."""
        blocks = blockify(x, self.block_size)
        return ops.matmul(blocks, ops.transpose(self.weights.value, (1, 0)))

    def adjoint(self, y, hw):
        """Transpose-apply measurements back to an image of shape (H, W)."""
        b = self.block_size
        nb = (hw[0] // b) * (hw[1] // b)
        if y.ndim != 2 or y.shape != (nb, self.rows):
            raise DimensionError(f"adjoint expected measurements [{nb},{self.rows}], got {y.shape}")
        blocks = ops.matmul(y, self.weights.value)
        return unblockify(blocks, b, hw)


class DualSampler(Module):
    """Pair of sensing matrices (phi1, phi2) sharing one block grid."""

    def __init__(self, phi1, phi2, gamma, split):
        if phi1.block_size != phi2.block_size:
            raise ConfigError("phi1 and phi2 must share the block size")
        self.phi1 = phi1
        self.phi2 = phi2
        self.gamma = gamma
        self.split = tuple(split)

    @property
    def block_size(self):
        return self.phi1.block_size


def split_rows(gamma, split, block_size):
    """Measurement budget and its split: M_total = round(gamma*B^2), M1:M2 ~ s1:s2."""
    if not (0.0 < gamma <= 1.0):
        raise ConfigError(f"gamma must lie in (0, 1], got {gamma}")
    s1, s2 = split
    if s1 <= 0 or s2 <= 0:
        raise ConfigError(f"split components must be positive, got {split}")
    if block_size < 2:
        raise ConfigError(f"block size must be >= 2, got {block_size}")
    m_total = round_half_up(gamma * block_size * block_size)
    if m_total < 2:
        raise ConfigError(f"measurement budget {m_total} too small to split between two branches")
    m1 = min(max(round_half_up(m_total * s1 / (s1 + s2)), 1), m_total - 1)
    return m_total, m1, m_total - m1


def build_dual_sampler(gamma, split, block_size, seed):
    """Gaussian-initialized dual sampler; same seed gives bit-identical weights."""
    m_total, m1, m2 = split_rows(gamma, split, block_size)
    rng = np.random.default_rng(seed)
    sigma = 1.0 / block_size
    dt = default_dtype()
    w1 = (rng.standard_normal((m1, block_size * block_size)) * sigma).astype(dt)
    w2 = (rng.standard_normal((m2, block_size * block_size)) * sigma).astype(dt)
    return DualSampler(
        BlockSensingMatrix(m1, block_size, w1),
        BlockSensingMatrix(m2, block_size, w2),
        gamma,
        split,
    )


def sample(sampler, x):
    """y1, y2 = phi1 x, phi2 x (differentiable w.r.t. x and the weights)."""
    return sampler.phi1.apply(x), sampler.phi2.apply(x)


def data_grad(phi, x, y, hw=None):
    """Data-fidelity gradient phiT(phi x - y) at the image x."""
    hw = hw or (x.shape[2], x.shape[3])
    residual = ops.sub(phi.apply(x), y)
    return phi.adjoint(residual, hw)


def initial_recon(sampler, y1, y2, fuse_conv, hw):
    """Fuse the two adjoint back-projections into the initial estimate."""
    x1 = sampler.phi1.adjoint(y1, hw)
    x2 = sampler.phi2.adjoint(y2, hw)
    return fuse_conv(ops.concat([x1, x2], axis=1))
