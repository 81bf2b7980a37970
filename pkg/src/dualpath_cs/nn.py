"""Parameter containers and the small layer zoo the reconstructor is built from."""

import numpy as np

from . import ops
from .autograd import Tensor, default_dtype
from .conv import conv2d, conv_transpose2x
from .errors import ContractError


class Parameter:
    """Learnable tensor plus its Adam state.

    `name` is a dotted path ("stages.2.step_gen.out.weight") assigned when the
    owning module tree is walked; it keys the checkpoint table.
    """

    def __init__(self, array):
        self.value = Tensor(np.asarray(array), requires_grad=True)
        self.name = ""
        self.adam_m = np.zeros_like(self.value.data)
        self.adam_v = np.zeros_like(self.value.data)
        self.step_count = 0

    @property
    def data(self):
        return self.value.data

    @data.setter
    def data(self, arr):
        self.value.data = arr

    @property
    def grad(self):
        return self.value.grad

    def __repr__(self):
        return f"Parameter({self.name or '?'}, shape={self.value.shape})"


class Module:
    """Minimal parameter-tree container with dotted-name traversal."""

    def __setattr__(self, key, value):
        object.__setattr__(self, key, value)

    def _children(self):
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                yield key, value
            elif isinstance(value, Module):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix=""):
        for key, child in self._children():
            name = f"{prefix}.{key}" if prefix else key
            if isinstance(child, Parameter):
                child.name = name
                yield name, child
            else:
                yield from child.named_parameters(name)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def uniform_fan_in(rng, shape, fan_in, dtype=None):
    """Zero-mean uniform init scaled by 1/sqrt(fan_in); the conv/linear default."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype or default_dtype())


class Conv2d(Module):
    def __init__(self, cin, cout, kernel, rng, stride=1, padding=None, bias=True):
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        fan_in = cin * kernel * kernel
        self.weight = Parameter(uniform_fan_in(rng, (cout, cin, kernel, kernel), fan_in))
        self.bias = Parameter(np.zeros(cout, dtype=default_dtype())) if bias else None

    def forward(self, x):
        b = None if self.bias is None else self.bias.value
        return conv2d(x, self.weight.value, b, stride=self.stride, padding=self.padding)


class ConvTranspose2x(Module):
    """Stride-2 transposed conv with 2x2 kernel: exact spatial doubling."""

    def __init__(self, cin, cout, rng, bias=True):
        self.weight = Parameter(uniform_fan_in(rng, (cin, cout, 2, 2), cin))
        self.bias = Parameter(np.zeros(cout, dtype=default_dtype())) if bias else None

    def forward(self, x):
        b = None if self.bias is None else self.bias.value
        return conv_transpose2x(x, self.weight.value, b)


class LayerNormChannels(Module):
    """LayerNorm over the channel axis of an [N,C,H,W] map (eps 1e-5)."""

    def __init__(self, channels, eps=1e-5):
        self.eps = eps
        self.gain = Parameter(np.ones(channels, dtype=default_dtype()))
        self.shift = Parameter(np.zeros(channels, dtype=default_dtype()))

    def forward(self, x):
        moved = ops.transpose(x, (0, 2, 3, 1))
        normed = ops.layer_norm(moved, self.gain.value, self.shift.value, eps=self.eps)
        return ops.transpose(normed, (0, 3, 1, 2))


class SpatialGate(Module):
    """Spatial attention: gate by a 7x7 conv over channel-max and channel-mean maps."""

    def __init__(self, rng, kernel=7):
        self.conv = Conv2d(2, 1, kernel, rng)

    def forward(self, x):
        mx = ops.reduce_max(x, axis=1, keepdims=True)
        mn = ops.reduce_mean(x, axis=1, keepdims=True)
        gate = ops.sigmoid(self.conv(ops.concat([mx, mn], axis=1)))
        return ops.mul(x, gate)


class ChannelGate(Module):
    """Squeeze-excite channel attention with reduction 4 and a sigmoid gate."""

    def __init__(self, channels, rng, reduction=4):
        hidden = max(1, channels // reduction)
        self.down = Conv2d(channels, hidden, 1, rng)
        self.up = Conv2d(hidden, channels, 1, rng)

    def forward(self, x):
        squeezed = ops.global_avg_pool(x)
        gate = ops.sigmoid(self.up(ops.gelu(self.down(squeezed))))
        return ops.mul(x, gate)


class Adam:
    """Adam with bias correction; clears gradients after each step."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self):
        for p in self.params:
            g = p.value.grad
            if g is None:
                raise ContractError(f"parameter {p.name or '?'} has no gradient; run backward first")
            p.step_count += 1
            t = p.step_count
            p.adam_m = self.beta1 * p.adam_m + (1.0 - self.beta1) * g
            p.adam_v = self.beta2 * p.adam_v + (1.0 - self.beta2) * (g * g)
            m_hat = p.adam_m / (1.0 - self.beta1 ** t)
            v_hat = p.adam_v / (1.0 - self.beta2 ** t)
            p.value.data = p.value.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            p.value.grad = None

    def zero_grad(self):
        for p in self.params:
            p.value.grad = None
