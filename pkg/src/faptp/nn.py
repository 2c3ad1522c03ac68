"""Layers and parameter containers built on the autodiff engine."""

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


class Module:
    """Parameter container with recursive discovery and train/eval state."""

    def __init__(self):
        self.training = True

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if name.startswith("_cache"):
                continue
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=f"{path}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Parameter):
                        yield f"{path}.{i}", item
                    elif isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{path}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def n_params(self):
        return int(sum(p.size for p in self.parameters()))

    def train(self, mode=True):
        self.training = mode
        for _, value in vars(self).items():
            if isinstance(value, Module):
                value.train(mode)
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        item.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in own.items():
            if p.data.shape != state[name].shape:
                raise ValueError(
                    f"shape mismatch for {name}: {p.data.shape} vs {state[name].shape}"
                )
            p.data = np.asarray(state[name], dtype=np.float64).copy()


def uniform_init(rng, shape, fan_in):
    k = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-k, k, shape)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True, zero_init=False):
        super().__init__()
        if zero_init:
            self.w = Parameter(np.zeros((d_in, d_out)))
        else:
            self.w = Parameter(uniform_init(rng, (d_in, d_out), d_in))
        self.b = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x):
        out = ad.matmul(x, self.w)
        if self.b is not None:
            out = out + self.b
        return out


_ACTS = {
    "relu": ad.relu,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "silu": ad.silu,
    "elu": ad.elu,
    "softplus": ad.softplus,
    "none": lambda x: x,
}


class MLP(Module):
    """Fully connected stack; activation on all but the final layer."""

    def __init__(self, dims, rng, act="relu", final_act="none", zero_last=False):
        super().__init__()
        self.layers = [
            Linear(dims[i], dims[i + 1], rng, zero_init=(zero_last and i == len(dims) - 2))
            for i in range(len(dims) - 1)
        ]
        self.act = act
        self.final_act = final_act

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            name = self.act if i < len(self.layers) - 1 else self.final_act
            x = _ACTS[name](x)
        return x


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        super().__init__()
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x):
        return ad.layer_norm(x, self.gain, self.bias, axis=-1, eps=self.eps)


class Dropout(Module):
    def __init__(self, p, rng):
        super().__init__()
        self.p = p
        self.rng = rng

    def __call__(self, x):
        return ad.dropout(x, self.p, self.rng, self.training)


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, rng, padding="same", bias=True):
        super().__init__()
        self.w = Parameter(uniform_init(rng, (c_out, c_in, k, k), c_in * k * k))
        self.b = Parameter(np.zeros(c_out)) if bias else None
        self.padding = (k - 1) // 2 if padding == "same" else int(padding)

    def __call__(self, x):
        return ad.conv2d(x, self.w, self.b, padding=self.padding)


class Scalar(Module):
    """A single learnable scalar, optionally squashed through sigmoid."""

    def __init__(self, value, squash=None):
        super().__init__()
        self.raw = Parameter(np.array(float(value)))
        self.squash = squash

    def __call__(self):
        if self.squash == "sigmoid":
            return ad.sigmoid(self.raw)
        if self.squash == "softplus":
            return ad.softplus(self.raw)
        return self.raw

    def value(self):
        return float(self().data)


def logit(p):
    """Inverse sigmoid, for initializing squashed scalars at a target value."""
    p = float(p)
    return float(np.log(p / (1.0 - p)))
