"""Unrolled proximal-gradient reconstruction branch.

Each of the K stages runs a gradient-descent step with a learned spatially
varying step map (modulated by content guidance and relative stage progress)
followed by a learned proximal mapping: pixel-token attention gated by the
hard block mask, then a three-scale encoder-decoder whose features are
modulated by the soft confidence map and carried across stages.
"""

import numpy as np

from . import ops
from .autograd import Tensor, default_dtype
from .errors import ContractError, GeometryError, ResourceError
from .nn import ChannelGate, Conv2d, ConvTranspose2x, LayerNormChannels, Module, SpatialGate
from .sampling import data_grad

DEFAULT_TOKEN_CAP = 4096


def stage_factor(k, total, hw, dtype=None):
    """Constant map k/total: the relative progress of stage k of `total`."""
    if not 1 <= k <= total:
        raise ContractError(f"stage index {k} outside [1, {total}]")
    value = k / total
    return Tensor(np.full((1, 1) + tuple(hw), value, dtype=dtype or default_dtype()))


class StepSizeGenerator(Module):
    """Step-map network: concat guidance, channel-attend, reduce to one channel.

    The channel attention uses a sigmoid gate (squeeze ratio 4); the final
    stack leaves the step map unconstrained in sign.
    """

    def __init__(self, channels, rng):
        cin = channels + 2
        hidden = max(1, cin // 4)
        self.ca_down = Conv2d(cin, hidden, 1, rng)
        self.ca_up = Conv2d(hidden, cin, 1, rng)
        self.conv1 = Conv2d(cin, channels, 3, rng)
        self.conv2 = Conv2d(channels, channels, 3, rng)
        self.out = Conv2d(channels, 1, 3, rng)

    def forward(self, signal, stage_map):
        f_in = ops.concat([signal.grad_map, signal.features, stage_map], axis=1)
        gate = ops.sigmoid(self.ca_up(ops.gelu(self.ca_down(ops.global_avg_pool(f_in)))))
        f_ca = ops.mul(f_in, gate)
        return self.out(ops.relu(self.conv2(ops.relu(self.conv1(f_ca)))))


def hgdm_step(x_prev, y1, y2, sampler, p):
    """r = x - p * (phi1T(phi1 x - y1) + phi2T(phi2 x - y2))."""
    hw = (x_prev.shape[2], x_prev.shape[3])
    grad = ops.add(
        data_grad(sampler.phi1, x_prev, y1, hw),
        data_grad(sampler.phi2, x_prev, y2, hw),
    )
    return ops.sub(x_prev, ops.mul(p, grad))


class HardMaskedAttention(Module):
    """Pixel-token attention whose value features are gated by the hard mask.

    Tokens are pixels of the C-channel projection of r (single head, d = C);
    the block mask multiplies V so masked-out pixels contribute nothing to any
    aggregation. Quadratic cost is guarded by `token_cap`.
    """

    def __init__(self, channels, rng, token_cap=DEFAULT_TOKEN_CAP):
        self.channels = channels
        self.token_cap = token_cap
        self.proj = Conv2d(1, channels, 3, rng)
        self.to_q = Conv2d(channels, channels, 1, rng)
        self.to_k = Conv2d(channels, channels, 1, rng)
        self.to_v = Conv2d(channels, channels, 1, rng)

    def forward(self, r, hard_mask):
        _, _, h, w = r.shape
        tokens = h * w
        if tokens > self.token_cap:
            raise ResourceError(f"{tokens} attention tokens exceed the cap {self.token_cap}")
        feats = self.proj(r)

        def to_tokens(t):
            return ops.transpose(ops.reshape(t, (self.channels, tokens)), (1, 0))

        q = to_tokens(self.to_q(feats))
        k = to_tokens(self.to_k(feats))
        v = to_tokens(self.to_v(feats))
        mask_col = ops.reshape(hard_mask, (tokens, 1))
        v_masked = ops.mul(v, mask_col)
        att = ops.scaled_dot_attention(q, k, v_masked)
        att_map = ops.reshape(ops.transpose(att, (1, 0)), (1, self.channels, h, w))
        return ops.add(att_map, feats)


class DualAttentionUnit(Module):
    """LN -> parallel spatial+channel attention -> LN -> FFN, residual around each."""

    def __init__(self, channels, rng, expansion=2):
        self.norm1 = LayerNormChannels(channels)
        self.spatial = SpatialGate(rng)
        self.channel = ChannelGate(channels, rng)
        self.norm2 = LayerNormChannels(channels)
        self.ffn_in = Conv2d(channels, channels * expansion, 3, rng)
        self.ffn_out = Conv2d(channels * expansion, channels, 3, rng)

    def forward(self, x):
        z = self.norm1(x)
        x = ops.add(x, ops.add(self.spatial(z), self.channel(z)))
        z = self.norm2(x)
        return ops.add(x, self.ffn_out(ops.gelu(self.ffn_in(z))))


class SoftGuidedUNet(Module):
    """Three-scale encoder-decoder with per-scale soft-map modulation.

    Scale widths are (C, 2C, 4C); the soft map is halved per level by bilinear
    resizing; each scale entry adds the carried features from the previous
    stage; decoder levels merge encoder skips through 1x1 convs. The carried
    state for the next stage is the decoder feature triple (before the final
    image conv).
    """

    def __init__(self, channels, rng):
        c1, c2, c3 = channels, channels * 2, channels * 4
        self.align = Conv2d(c1, c1, 1, rng)
        self.enc1 = DualAttentionUnit(c1, rng)
        self.down1 = Conv2d(c1, c2, 3, rng, stride=2)
        self.enc2 = DualAttentionUnit(c2, rng)
        self.down2 = Conv2d(c2, c3, 3, rng, stride=2)
        self.enc3 = DualAttentionUnit(c3, rng)
        self.up2 = ConvTranspose2x(c3, c2, rng)
        self.skip2 = Conv2d(c2 * 2, c2, 1, rng)
        self.dec2 = DualAttentionUnit(c2, rng)
        self.up1 = ConvTranspose2x(c2, c1, rng)
        self.skip1 = Conv2d(c1 * 2, c1, 1, rng)
        self.dec1 = DualAttentionUnit(c1, rng)
        self.out = Conv2d(c1, 1, 3, rng)

    def forward(self, att, z_prev, soft_map):
        h, w = att.shape[2], att.shape[3]
        if h % 4 or w % 4:
            raise GeometryError(f"extents {h}x{w} must be divisible by 4 for three scales")
        m1 = soft_map
        m2 = ops.bilinear_resize(m1, 0.5)
        m3 = ops.bilinear_resize(m2, 0.5)
        f0 = self.align(att)
        e1 = self.enc1(ops.add(ops.mul(m1, f0), z_prev[0]))
        e2 = self.enc2(ops.add(ops.mul(m2, self.down1(e1)), z_prev[1]))
        e3 = self.enc3(ops.add(ops.mul(m3, self.down2(e2)), z_prev[2]))
        d2 = self.dec2(self.skip2(ops.concat([self.up2(e3), e2], axis=1)))
        d1 = self.dec1(self.skip1(ops.concat([self.up1(d2), e1], axis=1)))
        return self.out(d1), (d1, d2, e3)


class ReconstructionStage(Module):
    """One unrolled stage: modulated gradient step, then the learned proximal map."""

    def __init__(self, channels, rng, token_cap=DEFAULT_TOKEN_CAP):
        self.step_gen = StepSizeGenerator(channels, rng)
        self.hard_att = HardMaskedAttention(channels, rng, token_cap)
        self.soft_unet = SoftGuidedUNet(channels, rng)

    def forward(self, x_prev, y1, y2, sampler, signal, guidance, stage_map, z_prev):
        p = self.step_gen(signal, stage_map)
        r = hgdm_step(x_prev, y1, y2, sampler, p)
        att = self.hard_att(r, guidance.hard_mask)
        x_next, z_next = self.soft_unet(att, z_prev, guidance.soft_map)
        return x_next, z_next, p
