"""Dense float64 kernels and a record-based graph with reverse-mode
differentiation back to the network input.

Tensors are plain numpy float64 arrays, (N, C, H, W) for feature maps and
(N, F) for classifier outputs. Only input gradients are needed (networks are
scored untrained), so weights are constants of the graph and no parameter
gradients are kept.

Conventions fixed here so results are reproducible bit for bit:
  - convolutions are cross-correlations, stride 1, zero padding (k-1)/2,
    no bias;
  - 3x3 average pooling uses zero padding with the divisor fixed at 9
    (padded zeros count);
  - batch norm uses batch statistics (scale 1, shift 0, eps 1e-5) and
    gradients flow through the statistics;
  - the ReLU gradient at exactly 0 is 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5


class ShapeError(ValueError):
    """Operand shapes are inconsistent with the operation's contract."""


class GraphStateError(RuntimeError):
    """Graph used out of order, e.g. backward before forward."""


# ---------------------------------------------------------------------------
# Kernels (forward + input-gradient pairs)
# ---------------------------------------------------------------------------


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(N, C, H, W) -> (N, C*k*k, H*W) patch matrix, zero padding (k-1)/2."""
    n, c, h, w = x.shape
    if k == 1:
        return x.reshape(n, c, h * w)
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (N, C, H, W, k, k)
    return win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, h * w)


def _col2im(cols: np.ndarray, shape: tuple[int, int, int, int], k: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patches back to (N, C, H, W)."""
    n, c, h, w = shape
    if k == 1:
        return cols.reshape(n, c, h, w)
    pad = (k - 1) // 2
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    cols = cols.reshape(n, c, k, k, h, w)
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + h, j : j + w] += cols[:, :, i, j]
    return out[:, :, pad : pad + h, pad : pad + w]


def conv2d(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Cross-correlation of (N, Cin, H, W) with weights (Cout, Cin, k, k), k in {1, 3}."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d operands, got {x.shape} and {w.shape}")
    n, cin, h, wd = x.shape
    cout, cin_w, k, k2 = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d channel mismatch: input {cin}, weights {cin_w}")
    if k != k2 or k not in (1, 3):
        raise ShapeError(f"conv2d kernel must be 1x1 or 3x3, got {k}x{k2}")
    cols = _im2col(x, k)
    out = w.reshape(cout, -1) @ cols  # broadcasts to (N, Cout, H*W)
    return out.reshape(n, cout, h, wd)


def conv2d_input_grad(dout: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Gradient of conv2d w.r.t. its input, for upstream gradient dout."""
    n, cout, h, wd = dout.shape
    _, cin, k, _ = w.shape
    dcols = w.reshape(cout, -1).T @ dout.reshape(n, cout, h * wd)
    return _col2im(dcols, (n, cin, h, wd), k)


def avg_pool_3x3(x: np.ndarray) -> np.ndarray:
    """3x3 window mean, stride 1, zero pad 1; divisor fixed at 9."""
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))
    return win.mean(axis=(-2, -1))


# The pooling operator is self-adjoint (symmetric uniform stencil, same
# padding), so the input gradient is the same stencil applied to dout.
avg_pool_3x3_grad = avg_pool_3x3


def batch_norm(x: np.ndarray, eps: float = BN_EPS) -> np.ndarray:
    """Per-channel normalization by batch statistics over (N, H, W); scale 1, shift 0."""
    out, _ = batch_norm_with_cache(x, eps)
    return out


def batch_norm_with_cache(x: np.ndarray, eps: float = BN_EPS):
    axes = (0, 2, 3)
    mean = x.mean(axis=axes, keepdims=True)
    var = x.var(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    return xhat, (xhat, inv_std)


def batch_norm_input_grad(dout: np.ndarray, cache) -> np.ndarray:
    xhat, inv_std = cache
    axes = (0, 2, 3)
    dmean = dout.mean(axis=axes, keepdims=True)
    dproj = (dout * xhat).mean(axis=axes, keepdims=True)
    return inv_std * (dout - dmean - xhat * dproj)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_input_grad(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dout * (x > 0.0)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """(N, C, H, W) -> (N, C) spatial mean."""
    return x.mean(axis=(2, 3))


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Flatten x to (N, F) and apply xW + b; W is (F, K)."""
    flat = x.reshape(x.shape[0], -1)
    if flat.shape[1] != w.shape[0]:
        raise ShapeError(f"linear expects {w.shape[0]} features, got {flat.shape[1]}")
    return flat @ w + b


# ---------------------------------------------------------------------------
# Computation graph
# ---------------------------------------------------------------------------

_KINDS = ("input", "conv", "bn", "relu", "avg_pool", "sum", "zeros", "gap", "linear")


@dataclass
class Record:
    """One op in a CompGraph: kind, operand record ids, constant parameters,
    plus the cached activation and whatever the backward pass needs."""

    kind: str
    inputs: tuple[int, ...]
    weight: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None
    out: Optional[np.ndarray] = field(default=None, repr=False)
    cache: object = field(default=None, repr=False)


class CompGraph:
    """Topologically ordered op records; record 0 is the network input and the
    last record holds the logits.

    A graph instance is single-use per forward/backward pair: forward caches
    the activations that backward consumes. Distinct graphs are independent.
    """

    def __init__(self) -> None:
        self.records: list[Record] = [Record("input", ())]
        self._forward_done = False

    def add(self, kind: str, *inputs: int, weight: np.ndarray | None = None,
            bias: np.ndarray | None = None) -> int:
        """Append a record; operands must already exist (keeps the graph acyclic)."""
        if kind not in _KINDS:
            raise ValueError(f"unknown record kind {kind!r}")
        for i in inputs:
            if not 0 <= i < len(self.records):
                raise ValueError(f"operand id {i} out of range")
        self.records.append(Record(kind, inputs, weight, bias))
        return len(self.records) - 1

    @property
    def output_id(self) -> int:
        return len(self.records) - 1

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Execute all records in order; returns the logits and caches activations."""
        recs = self.records
        recs[0].out = np.asarray(x, dtype=np.float64)
        for rec in recs[1:]:
            srcs = [recs[i].out for i in rec.inputs]
            if rec.kind == "conv":
                rec.out = conv2d(srcs[0], rec.weight)
            elif rec.kind == "bn":
                rec.out, rec.cache = batch_norm_with_cache(srcs[0])
            elif rec.kind == "relu":
                rec.cache = srcs[0]
                rec.out = relu(srcs[0])
            elif rec.kind == "avg_pool":
                rec.out = avg_pool_3x3(srcs[0])
            elif rec.kind == "sum":
                shapes = {a.shape for a in srcs}
                if len(shapes) != 1:
                    raise ShapeError(f"sum operands disagree on shape: {sorted(shapes)}")
                rec.out = srcs[0].copy()
                for a in srcs[1:]:
                    rec.out += a
            elif rec.kind == "zeros":
                rec.out = np.zeros_like(srcs[0])
            elif rec.kind == "gap":
                rec.out = global_avg_pool(srcs[0])
            elif rec.kind == "linear":
                rec.cache = srcs[0].shape
                rec.out = linear(srcs[0], rec.weight, rec.bias)
        self._forward_done = True
        return recs[-1].out

    def backward_to_input(self, seed_grad: np.ndarray | None = None) -> np.ndarray:
        """Gradient of the seeded logits w.r.t. the input; default seed is all ones.

        With the all-ones seed the result is the gradient of the summed logits,
        which packs one Jacobian row per sample into (N, C, H, W).
        """
        if not self._forward_done:
            raise GraphStateError("backward requested before forward")
        recs = self.records
        grads: list[np.ndarray | None] = [None] * len(recs)
        logits = recs[-1].out
        grads[-1] = np.ones_like(logits) if seed_grad is None else np.asarray(seed_grad, float)

        def accumulate(rid: int, g: np.ndarray) -> None:
            # New-array addition instead of += keeps aliased grads safe.
            grads[rid] = g if grads[rid] is None else grads[rid] + g

        for rid in range(len(recs) - 1, 0, -1):
            g = grads[rid]
            if g is None:
                continue
            rec = recs[rid]
            if rec.kind == "conv":
                accumulate(rec.inputs[0], conv2d_input_grad(g, rec.weight))
            elif rec.kind == "bn":
                accumulate(rec.inputs[0], batch_norm_input_grad(g, rec.cache))
            elif rec.kind == "relu":
                accumulate(rec.inputs[0], relu_input_grad(g, rec.cache))
            elif rec.kind == "avg_pool":
                accumulate(rec.inputs[0], avg_pool_3x3_grad(g))
            elif rec.kind == "sum":
                for i in rec.inputs:
                    accumulate(i, g)
            elif rec.kind == "zeros":
                pass
            elif rec.kind == "gap":
                n, c = g.shape
                _, _, h, w = recs[rec.inputs[0]].out.shape
                accumulate(rec.inputs[0], np.broadcast_to(g[:, :, None, None] / (h * w),
                                                          (n, c, h, w)).copy())
            elif rec.kind == "linear":
                accumulate(rec.inputs[0], (g @ rec.weight.T).reshape(rec.cache))
        if grads[0] is None:
            grads[0] = np.zeros_like(recs[0].out)
        return grads[0]

    def relu_preacts(self) -> list[np.ndarray]:
        """Cached ReLU inputs from the latest forward (used for kink filtering)."""
        if not self._forward_done:
            raise GraphStateError("no forward has been run")
        return [rec.cache for rec in self.records if rec.kind == "relu"]


def grad_check(graph: CompGraph, x: np.ndarray, step: float = 1e-4,
               num_samples: int | None = None, rng=None,
               kink_filter: bool = True) -> float:
    """Max relative error between backward_to_input and central differences.

    The relative error denominator is max(|analytic|, |numeric|, 1e-8).
    Checks every input element by default, or ``num_samples`` randomly chosen
    elements. When ``kink_filter`` is set, elements whose +/-step perturbation
    flips the sign of any ReLU preactivation are skipped: the finite-difference
    secant straddles the kink there and is not a valid gradient estimate.
    """
    x = np.asarray(x, dtype=np.float64)
    graph.forward(x)
    analytic = graph.backward_to_input()

    total = x.size
    if num_samples is None or num_samples >= total:
        indices = np.arange(total)
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        indices = rng.choice(total, size=num_samples, replace=False)

    def probe(xi: np.ndarray):
        s = float(graph.forward(xi).sum())
        signs = [np.sign(p) for p in graph.relu_preacts()]
        return s, signs

    max_err = 0.0
    checked = 0
    for idx in indices:
        xp = x.copy()
        xp.flat[idx] += step
        s_plus, signs_plus = probe(xp)
        xp.flat[idx] -= 2 * step
        s_minus, signs_minus = probe(xp)
        if kink_filter and any((a != b).any() for a, b in zip(signs_plus, signs_minus)):
            continue
        numeric = (s_plus - s_minus) / (2.0 * step)
        a = float(analytic.flat[idx])
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        max_err = max(max_err, err)
        checked += 1
    if checked == 0:
        raise RuntimeError("every sampled element was kink-filtered; nothing checked")
    return max_err
