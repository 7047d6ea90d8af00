"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Operations executed while a Tape is active append records in execution
order (a Wengert list); backward() walks the records in reverse, so
gradients accumulate additively across fan-out without an explicit
topological sort. Everything is float64 for reproducible gradient checks.

The spike nonlinearity heaviside_sg is the one non-smooth op: its forward
is an exact Heaviside step while its backward uses the derivative of the
arctangent soft step (alpha/2) / (1 + (pi alpha u / 2)^2); soft=True swaps
the forward to the arctangent itself so the whole network becomes a smooth
function for finite-difference checking.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NotScalarLoss(ValueError):
    pass


class Tensor:
    """A dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __getitem__(self, key) -> "Tensor":
        return take(self, key)


@dataclass
class TapeRecord:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], tuple]


class Tape:
    """Execution-ordered record of operations for one forward pass."""

    def __init__(self):
        self.records: list[TapeRecord] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.pop()


_ACTIVE: list[Tape] = []


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(inputs: tuple[Tensor, ...], output: Tensor, backward) -> Tensor:
    if _ACTIVE:
        _ACTIVE[-1].records.append(TapeRecord(inputs, output, backward))
    return output


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape of a broadcast operand."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)
    return _record((a, b), out, lambda g: (_unbroadcast(g, a.shape),
                                           _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data - b.data)
    return _record((a, b), out, lambda g: (_unbroadcast(g, a.shape),
                                           _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)
    return _record((a, b), out, lambda g: (_unbroadcast(g * b.data, a.shape),
                                           _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data / b.data)
    return _record((a, b), out,
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    out = Tensor(a.data * c)
    return _record((a,), out, lambda g: (g * c,))


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    root = np.sqrt(a.data)
    out = Tensor(root)
    return _record((a,), out, lambda g: (g * 0.5 / root,))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0.0))
    return _record((a,), out, lambda g: (g * mask,))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch("matmul operands need at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul inner dims {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _record((a, b), out, backward)


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = Tensor(np.transpose(a.data, axes))
    return _record((a,), out, lambda g: (np.transpose(g, inverse),))


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    return _record((a,), out, lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    return _record(tuple(ts), out,
                   lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in ts], axis=axis))
    return _record(tuple(ts), out,
                   lambda g: tuple(np.moveaxis(g, axis, 0)))


def take(a, key) -> Tensor:
    """Basic slicing/indexing; the backward scatters into zeros."""
    a = _as_tensor(a)
    out = Tensor(a.data[key])

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return _record((a,), out, backward)


def tile_leading(a, reps: int) -> Tensor:
    """Replicate a tensor along a new leading axis (reps, *shape)."""
    a = _as_tensor(a)
    out = Tensor(np.broadcast_to(a.data, (reps,) + a.shape).copy())
    return _record((a,), out, lambda g: (g.sum(axis=0),))


def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = Tensor(a.data.mean(axis=axes, keepdims=keepdims))

    def backward(g):
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axes)
        return (np.broadcast_to(gg / count, a.shape).copy(),)

    return _record((a,), out, backward)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = _as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    out = Tensor(a.data.sum(axis=axes, keepdims=keepdims))

    def backward(g):
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axes)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _record((a,), out, backward)


def conv1d(x, kernels, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation along the time axis.

    x: (..., T, C_in); kernels: (C_out, C_in, K). Output (..., T', C_out)
    with T' = floor((T + 2 padding - K) / stride) + 1.
    """
    x, kernels = _as_tensor(x), _as_tensor(kernels)
    if kernels.ndim != 3:
        raise ShapeMismatch("kernels must be (C_out, C_in, K)")
    c_out, c_in, k = kernels.shape
    if x.ndim < 2 or x.shape[-1] != c_in:
        raise ShapeMismatch(f"input channels {x.shape} vs kernels {kernels.shape}")
    t = x.shape[-2]
    if k > t + 2 * padding:
        raise ShapeMismatch("kernel longer than the padded input")
    pad_spec = [(0, 0)] * (x.ndim - 2) + [(padding, padding), (0, 0)]
    xp = np.pad(x.data, pad_spec) if padding else x.data
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=-2)
    windows = windows[..., ::stride, :, :]  # (..., T', C_in, K)
    out = Tensor(np.einsum("...tck,ock->...to", windows, kernels.data,
                           optimize=True))
    t_out = out.shape[-2]

    def backward(g):
        g_kernels = np.einsum("...tck,...to->ock", windows, g, optimize=True)
        gxp = np.zeros_like(xp)
        for j in range(k):
            # contribution of kernel tap j to input positions j + stride*t'
            contrib = np.einsum("...to,oc->...tc", g, kernels.data[:, :, j],
                                optimize=True)
            gxp[..., j:j + stride * t_out:stride, :] += contrib
        gx = gxp[..., padding:padding + t, :] if padding else gxp
        return gx, g_kernels

    return _record((x, kernels), out, backward)


@dataclass
class BatchNormState:
    """Running statistics for one batch-normalized feature axis."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @staticmethod
    def for_features(n: int) -> "BatchNormState":
        return BatchNormState(np.zeros(n), np.ones(n))


def batchnorm(x, gamma, beta, state: BatchNormState, training: bool) -> Tensor:
    """Normalize over all axes except the last (the feature axis).

    Training mode normalizes with batch statistics and updates the running
    estimates (unbiased variance, momentum per state); eval mode uses the
    running statistics. Fused into a single tape record for speed.
    """
    x = _as_tensor(x)
    if x.shape[-1] != state.running_mean.shape[0]:
        raise ShapeMismatch(
            f"features {x.shape[-1]} vs state {state.running_mean.shape[0]}")
    gamma, beta = _as_tensor(gamma), _as_tensor(beta)
    axes = tuple(range(x.ndim - 1))
    if training:
        mu = x.data.mean(axis=axes, keepdims=True)
        centered = x.data - mu
        var = (centered * centered).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + state.eps)
        xhat = centered * inv
        count = x.size // x.shape[-1]
        bessel = count / max(count - 1, 1)
        m = state.momentum
        state.running_mean = ((1 - m) * state.running_mean
                              + m * mu.reshape(-1))
        state.running_var = ((1 - m) * state.running_var
                             + m * var.reshape(-1) * bessel)
    else:
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x.data - state.running_mean) * inv
    out = Tensor(xhat * gamma.data + beta.data)

    def backward(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gamma.data
        if training:
            dx = inv * (dxhat - dxhat.mean(axis=axes, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True))
        else:
            dx = dxhat * inv
        return dx, dgamma, dbeta

    return _record((x, gamma, beta), out, backward)


def heaviside_sg(u, alpha: float, soft: bool = False) -> Tensor:
    """Heaviside step with an arctangent surrogate derivative.

    Forward: 1 where u >= 0 else 0 (soft=True uses the smooth
    arctan(pi alpha u / 2)/pi + 1/2 instead). Backward in both modes:
    (alpha/2) / (1 + (pi alpha u / 2)^2).
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    u = _as_tensor(u)
    if soft:
        out = Tensor(np.arctan(math.pi * alpha * u.data / 2.0) / math.pi + 0.5)
    else:
        out = Tensor((u.data >= 0.0).astype(np.float64))
    half_pi_alpha_u = math.pi * alpha * u.data / 2.0
    deriv = (alpha / 2.0) / (1.0 + half_pi_alpha_u * half_pi_alpha_u)
    return _record((u,), out, lambda g: (g * deriv,))


def lif_chain(currents, beta: float, u_thr: float, v_reset: float,
              alpha: float, soft: bool = False) -> Tensor:
    """Leaky integrate-and-fire recurrence over the leading axis, fused.

    Semantics per step t (membrane starts at the reset potential):
    U = H + I_t; S_t = step(U - u_thr); H = v_reset S_t + (1 - S_t) beta U.
    Forward output stacks the spikes; backward runs the reverse recurrence
    with the arctangent surrogate in place of the step derivative. One tape
    record replaces the composed per-step graph.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    x = _as_tensor(currents)
    t_s = x.shape[0]
    h = np.full(x.shape[1:], float(v_reset))
    us = np.empty_like(x.data)
    ss = np.empty_like(x.data)
    for t in range(t_s):
        u = h + x.data[t]
        if soft:
            s = np.arctan(math.pi * alpha * (u - u_thr) / 2.0) / math.pi + 0.5
        else:
            s = (u >= u_thr).astype(np.float64)
        h = v_reset * s + (1.0 - s) * beta * u
        us[t] = u
        ss[t] = s
    out = Tensor(ss.copy())

    def backward(g):
        gi = np.empty_like(g)
        gh = np.zeros(x.shape[1:])
        for t in range(t_s - 1, -1, -1):
            u, s = us[t], ss[t]
            shifted = math.pi * alpha * (u - u_thr) / 2.0
            surrogate = (alpha / 2.0) / (1.0 + shifted * shifted)
            gs_total = g[t] + gh * (v_reset - beta * u)
            gu = gh * beta * (1.0 - s) + gs_total * surrogate
            gi[t] = gu
            gh = gu
        return (gi,)

    return _record((x,), out, backward)


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate .grad on every requires_grad tensor reachable from loss.

    Gradients accumulate additively into pre-existing .grad values, so two
    backward passes over separate losses sum their contributions.
    """
    if loss.size != 1:
        raise NotScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    hit = {id(loss): loss}
    for rec in reversed(tape.records):
        g_out = grads.get(id(rec.output))
        if g_out is None:
            continue
        for t, g in zip(rec.inputs, rec.backward(g_out)):
            if g is None:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
                hit[key] = t
    for key, t in hit.items():
        if t.requires_grad:
            t.grad = grads[key] if t.grad is None else t.grad + grads[key]


@dataclass
class Adam:
    """Adaptive-moment optimizer state; buffers allocate on first use."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def optimizer_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None],
                   opt: Adam) -> None:
    """One bias-corrected adaptive-moment update, in place.

    A None gradient is treated as zero. Deterministic for identical inputs.
    """
    if len(params) != len(grads):
        raise ShapeMismatch("params and grads differ in length")
    if not opt.m:
        opt.m = [np.zeros_like(p.data) for p in params]
        opt.v = [np.zeros_like(p.data) for p in params]
    opt.step_count += 1
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1 ** opt.step_count
    c2 = 1.0 - b2 ** opt.step_count
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"grad {g.shape} vs param {p.data.shape}")
        opt.m[i] = b1 * opt.m[i] + (1 - b1) * g
        opt.v[i] = b2 * opt.v[i] + (1 - b2) * (g * g)
        m_hat = opt.m[i] / c1
        v_hat = opt.v[i] / c2
        p.data = p.data - opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)


def gradcheck(fn: Callable[[], Tensor], params: Sequence[Tensor],
              h: float = 1e-5, max_coords: int | None = None,
              seed: int = 0) -> float:
    """Worst normalized difference between tape and central-difference grads.

    fn must rebuild the scalar loss from the current parameter values. When
    max_coords is set, a deterministic random subset of coordinates is
    checked per parameter.
    """
    with Tape() as tape:
        loss = fn()
    for p in params:
        p.zero_grad()
    backward(tape, loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        coords = (range(n) if max_coords is None or n <= max_coords
                  else rng.choice(n, size=max_coords, replace=False))
        num = np.zeros(n)
        checked = np.zeros(n, dtype=bool)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + h
            up = float(fn().data)
            flat[idx] = orig - h
            down = float(fn().data)
            flat[idx] = orig
            num[idx] = (up - down) / (2.0 * h)
            checked[idx] = True
        ana_flat = ana.reshape(-1)
        denom = max(np.max(np.abs(num[checked]), initial=0.0),
                    np.max(np.abs(ana_flat[checked]), initial=0.0), 1e-10)
        diff = np.max(np.abs(num[checked] - ana_flat[checked]), initial=0.0)
        worst = max(worst, diff / denom)
    return worst


MAGIC = b"SPNVTNS1"
FORMAT_VERSION = 1


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named arrays to the flat binary container.

    Layout: 8-byte magic, uint32 version, uint32 record count; per record a
    uint32 name length, the UTF-8 name, uint32 ndim, uint32 dims, then the
    row-major float64 little-endian values.
    """
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(tensors)))
        for name, arr in tensors.items():
            encoded = name.encode("utf-8")
            arr = np.asarray(arr, dtype="<f8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_tensors(path) -> dict[str, np.ndarray]:
    """Read a container written by save_tensors, preserving record order."""
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ValueError(f"{path}: not a tensor container")
        version, count = struct.unpack("<II", fh.read(8))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported container version {version}")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim)) if ndim else ()
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * n), dtype="<f8")
            out[name] = data.reshape(shape).astype(np.float64)
        return out
