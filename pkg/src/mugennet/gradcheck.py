"""Self-contained finite-difference gradient checks, runnable from the CLI.

Each check builds a scalar function of one leaf tensor at f64, compares the
reverse-mode gradient against central differences, and reports the worst
relative error. The test suite carries its own independent oracle; this
module exists so a user can sanity-check an installation quickly.
"""

import numpy as np

from . import tensor as T
from .cnn import BasicBlock
from .decoder import AttentionGate
from .losses import combined_loss, total_loss
from .mugen import MugenConfig, MugenFuse
from .nn import BatchNorm2d, LayerNorm
from .tensor import Tensor
from .vit import PatchConfig, TransformerBlock


def central_diff(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f`` w.r.t. array ``x`` (f64)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return float(np.abs(a - b).max() / denom)


def check_op(make_scalar, x0, h=1e-5):
    """``make_scalar(tensor) -> scalar Tensor``; returns worst relative error."""
    x = Tensor(np.asarray(x0, dtype=np.float64), requires_grad=True)
    out = make_scalar(x)
    out.backward()
    numeric = central_diff(lambda arr: make_scalar(Tensor(arr)).item(), x0, h=h)
    return rel_error(x.grad, numeric)


def _rng():
    return np.random.default_rng(0)


def _checks():
    rng = _rng()
    # all reference constants are sampled once, up front: the scalar functions
    # must be pure so central differencing stays meaningful
    x44 = rng.standard_normal((1, 2, 4, 4))
    w = rng.standard_normal((3, 2, 3, 3))
    b54 = rng.standard_normal((5, 4))
    x35 = rng.standard_normal((3, 5))
    c46 = rng.standard_normal((4, 6))
    x46 = rng.standard_normal((4, 6))
    x33 = rng.standard_normal((3, 3))
    c88 = rng.standard_normal((1, 2, 8, 8))
    c2233 = rng.standard_normal((2, 2, 3, 3))
    x2233 = rng.standard_normal((2, 2, 3, 3))
    c158 = rng.standard_normal((1, 5, 8))
    x158 = rng.standard_normal((1, 5, 8))
    r144 = rng.standard_normal((1, 4, 4, 4))
    x144 = rng.standard_normal((1, 4, 4, 4))
    g134 = rng.standard_normal((1, 3, 4, 4))
    x134 = rng.standard_normal((1, 3, 4, 4))
    gt = (rng.random((6, 6)) > 0.5).astype(np.float64)
    x66 = rng.standard_normal((6, 6))

    yield "matmul", lambda: check_op(lambda x: T.matmul(x, Tensor(b54)).sum(), x35)
    yield "conv2d", lambda: check_op(lambda x: T.conv2d(x, Tensor(w), pad=1).sum(), x44)
    yield "softmax_rows", lambda: check_op(
        lambda x: (T.softmax_rows(x) * Tensor(c46)).sum(), x46)
    yield "sigmoid", lambda: check_op(lambda x: T.sigmoid(x).sum(), x33)
    yield "gelu", lambda: check_op(lambda x: T.gelu(x).sum(), x33)
    yield "upsample2x", lambda: check_op(
        lambda x: (T.upsample2x(x, "bilinear") * Tensor(c88)).sum(), x44)

    ln = LayerNorm(6, dtype=np.float64)
    yield "layer_norm", lambda: check_op(lambda x: (ln(x) * Tensor(c46)).sum(), x46)

    bn = BatchNorm2d(2, dtype=np.float64)
    yield "batch_norm", lambda: check_op(lambda x: (bn(x) * Tensor(c2233)).sum(), x2233)

    blk = TransformerBlock(8, 2, 2.0, _rng(), dtype=np.float64)
    yield "transformer_block", lambda: check_op(
        lambda x: (blk(x) * Tensor(c158)).sum(), x158)

    fuse = MugenFuse(MugenConfig(4, 4, reduction=2), _rng(), dtype=np.float64)
    yield "mugen_fuse", lambda: check_op(lambda x: fuse(x, Tensor(r144)).sum(), x144)

    ag = AttentionGate(3, 3, _rng(), dtype=np.float64)
    yield "attention_gate", lambda: check_op(lambda x: ag(Tensor(g134), x).sum(), x134)

    blk_in = rng.standard_normal((2, 2, 4, 4))
    basic = BasicBlock(2, 3, _rng(), dtype=np.float64)
    yield "basic_block", lambda: check_op(lambda x: basic(x).sum(), blk_in)

    yield "combined_loss", lambda: check_op(lambda x: combined_loss(T.sigmoid(x), gt), x66)

    gt_batch = gt[None]
    yield "total_loss", lambda: check_op(
        lambda x: total_loss(T.sigmoid(x), T.sigmoid(x * 0.5),
                             T.sigmoid(x * -0.7), gt_batch), x66[None])


def run(module=None, tol_ops=1e-4, tol_composites=1e-3):
    """Run checks (optionally a single one by name); returns list of results."""
    composites = {"transformer_block", "basic_block", "mugen_fuse", "attention_gate",
                  "combined_loss", "total_loss", "batch_norm"}
    results = []
    for name, fn in _checks():
        if module is not None and name != module:
            continue
        err = fn()
        tol = tol_composites if name in composites else tol_ops
        results.append((name, err, tol, err < tol))
    if module is not None and not results:
        raise ValueError(f"no gradcheck named {module!r}")
    return results
