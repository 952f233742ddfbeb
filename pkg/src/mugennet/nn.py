"""Layer building blocks and the parameter-registration base class."""

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Base class with automatic child/parameter registration.

    ``named_parameters`` yields trainable tensors, ``named_state`` additionally
    yields persistent buffers (batch-norm running stats) — the latter is what
    goes into checkpoints.
    """

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array):
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_state(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p.data
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, m in self._modules.items():
            yield from m.named_state(prefix + name + ".")

    def load_state(self, state):
        """Load a {name: array} dict produced by ``named_state``. Strict."""
        own = dict(self.named_state())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)}, unexpected={sorted(extra)}")
        for name, arr in state.items():
            dst = own[name]
            if dst.shape != arr.shape:
                raise T.ShapeError(f"state tensor {name}: shape {arr.shape} != {dst.shape}")
            dst[...] = arr.astype(dst.dtype)

    def modules(self):
        yield self
        for m in self._modules.values():
            yield from m.modules()

    def train(self):
        for m in self.modules():
            object.__setattr__(m, "training", True)
        return self

    def eval(self):
        for m in self.modules():
            object.__setattr__(m, "training", False)
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, mods=()):
        super().__init__()
        self._list = []
        for m in mods:
            self.append(m)

    def append(self, mod):
        setattr(self, str(len(self._list)), mod)
        self._list.append(mod)

    def __iter__(self):
        return iter(self._list)

    def __len__(self):
        return len(self._list)

    def __getitem__(self, i):
        return self._list[i]


class Linear(Module):
    def __init__(self, in_dim, out_dim, rng, bias=True, dtype=np.float32):
        super().__init__()
        bound = np.sqrt(6.0 / (in_dim + out_dim))
        self.weight = Tensor(rng.uniform(-bound, bound, (in_dim, out_dim)).astype(dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True) if bias else None

    def forward(self, x):
        shape = x.shape
        flat = x.reshape((-1, shape[-1])) if len(shape) != 2 else x
        out = T.matmul(flat, self.weight)
        if self.bias is not None:
            out = out + self.bias
        if len(shape) != 2:
            out = out.reshape(shape[:-1] + (self.weight.shape[1],))
        return out


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, k, rng, stride=1, pad=0, bias=True,
                 dtype=np.float32, zero_init=False):
        super().__init__()
        fan_in = in_ch * k * k
        std = np.sqrt(2.0 / fan_in)
        w = np.zeros((out_ch, in_ch, k, k)) if zero_init else rng.normal(0.0, std, (out_ch, in_ch, k, k))
        self.weight = Tensor(w.astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True) if bias else None
        self.stride = stride
        self.pad = pad

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class BatchNorm2d(Module):
    def __init__(self, ch, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.gamma = Tensor(np.ones(ch, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(ch, dtype=dtype), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(ch, dtype=dtype))
        self.register_buffer("running_var", np.ones(ch, dtype=dtype))
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return T.batch_norm(x, self.gamma, self.beta, self.running_mean,
                            self.running_var, self.training,
                            momentum=self.momentum, eps=self.eps)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.eps = eps

    def forward(self, x):
        return T.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class ConvBNReLU(Module):
    """3x3 conv -> batch norm -> relu, the workhorse decoder/upsampling stage."""

    def __init__(self, in_ch, out_ch, rng, k=3, stride=1, dtype=np.float32):
        super().__init__()
        self.conv = Conv2d(in_ch, out_ch, k, rng, stride=stride, pad=k // 2,
                           bias=False, dtype=dtype)
        self.bn = BatchNorm2d(out_ch, dtype=dtype)

    def forward(self, x):
        return T.relu(self.bn(self.conv(x)))
