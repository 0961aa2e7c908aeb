"""Minimal deterministic neural substrate with reverse-mode differentiation.

Everything the two pipeline models need: 1-D (dilated) convolution, ReLU,
adaptive average pooling, dense layers, gradient reversal, softmax
cross-entropy, mean squared error, linear upsampling, and Adam. All math is
plain numpy, so forward and backward passes are bit-deterministic functions
of (inputs, parameters).
"""

from __future__ import annotations

import math
import struct
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from .errors import CheckpointVersionMismatch, LabelOutOfRange, ShapeMismatch


class Tensor:
    """A numpy array plus the closure that routes gradients to its parents."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64) \
            if not isinstance(data, np.ndarray) else data
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents: Tuple["Tensor", ...] = ()

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = grad.copy()       # copy: callers may pass views
        else:
            self.grad += grad

    def backward(self) -> None:
        if self.data.size != 1:
            raise ShapeMismatch("backward() starts from a scalar loss")
        topo: List[Tensor] = []
        seen = set()

        def visit(t: "Tensor"):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            topo.append(t)

        visit(self)
        self._accumulate(np.ones_like(self.data))
        for t in reversed(topo):
            if t._backward is not None:
                t._backward()

    def zero_grad(self) -> None:
        self.grad = None


def _node(data: np.ndarray, parents: Tuple[Tensor, ...]) -> Tensor:
    out = Tensor(data)
    out._parents = tuple(p for p in parents if isinstance(p, Tensor))
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def conv1d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, dilation: int = 1,
           padding="same") -> Tensor:
    """Cross-correlate x [C_in, L] with w [C_out, C_in, k]; bias b [C_out].

    ``padding`` is an integer of zeros per side or "same" (stride-1 only).
    """
    xd, wd = x.data, w.data
    if xd.ndim != 2 or wd.ndim != 3 or wd.shape[1] != xd.shape[0]:
        raise ShapeMismatch(f"conv1d: x {xd.shape} vs w {wd.shape}")
    c_out, c_in, k = wd.shape
    if b.data.shape != (c_out,):
        raise ShapeMismatch(f"conv1d: bias {b.data.shape} vs C_out {c_out}")
    k_eff = dilation * (k - 1) + 1
    if padding == "same":
        if stride != 1:
            raise ShapeMismatch("'same' padding requires stride 1")
        pad = (k_eff - 1) // 2, k_eff - 1 - (k_eff - 1) // 2
    else:
        pad = (int(padding), int(padding))
    xp = np.pad(xd, ((0, 0), pad))
    l_pad = xp.shape[1]
    if l_pad < k_eff:
        raise ShapeMismatch(f"conv1d: length {xd.shape[1]} too short for "
                            f"kernel {k} at dilation {dilation}")
    l_out = (l_pad - k_eff) // stride + 1
    starts = np.arange(l_out) * stride
    taps = np.arange(k) * dilation
    gather = starts[None, :] + taps[:, None]              # [k, L_out]
    cols = xp[:, gather].reshape(c_in * k, l_out)         # [C_in*k, L_out]
    wmat = wd.reshape(c_out, c_in * k)
    out = _node(wmat @ cols + b.data[:, None], (x, w, b))

    def backward():
        dy = out.grad
        if b.requires_grad or b._parents:
            b._accumulate(dy.sum(axis=1))
        if w.requires_grad or w._parents:
            w._accumulate((dy @ cols.T).reshape(wd.shape))
        if x.requires_grad or x._parents:
            dcols = (wmat.T @ dy).reshape(c_in, k, l_out)
            dxp = np.zeros_like(xp)
            for j in range(k):                   # per-tap strided slice adds
                lo = j * dilation
                dxp[:, lo:lo + (l_out - 1) * stride + 1:stride] += dcols[:, j, :]
            dx = dxp[:, pad[0]:xp.shape[1] - pad[1]] if (pad[0] or pad[1]) else dxp
            x._accumulate(dx)

    out._backward = backward
    return out


def adaptive_avg_pool1d(x: Tensor, out_len: int) -> Tensor:
    """Average-pool x [C, L] into out_len bins, PyTorch bin boundaries."""
    xd = x.data
    if xd.ndim != 2 or out_len < 1:
        raise ShapeMismatch(f"adaptive_avg_pool1d: x {xd.shape}, out_len {out_len}")
    c, l = xd.shape
    starts = np.floor(np.arange(out_len) * l / out_len).astype(int)
    ends = np.ceil((np.arange(out_len) + 1) * l / out_len).astype(int)
    data = np.empty((c, out_len))
    for i in range(out_len):
        data[:, i] = xd[:, starts[i]:ends[i]].mean(axis=1)
    out = _node(data, (x,))

    def backward():
        if x.requires_grad or x._parents:
            dx = np.zeros_like(xd)
            for i in range(out_len):
                dx[:, starts[i]:ends[i]] += \
                    out.grad[:, i:i + 1] / (ends[i] - starts[i])
            x._accumulate(dx)

    out._backward = backward
    return out


def relu(x: Tensor) -> Tensor:
    out = _node(np.maximum(x.data, 0.0), (x,))

    def backward():
        if x.requires_grad or x._parents:
            x._accumulate(out.grad * (x.data > 0))

    out._backward = backward
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Dense layer: w [n_out, n_in] on x [n_in] or a batch x [B, n_in]."""
    xd = x.data
    if xd.ndim not in (1, 2) or w.data.shape[1] != xd.shape[-1]:
        raise ShapeMismatch(f"linear: x {xd.shape} vs w {w.data.shape}")
    if xd.ndim == 1:
        out = _node(w.data @ xd + b.data, (x, w, b))
    else:
        out = _node(xd @ w.data.T + b.data, (x, w, b))

    def backward():
        dy = out.grad
        if b.requires_grad or b._parents:
            b._accumulate(dy if dy.ndim == 1 else dy.sum(axis=0))
        if w.requires_grad or w._parents:
            w._accumulate(np.outer(dy, xd) if dy.ndim == 1 else dy.T @ xd)
        if x.requires_grad or x._parents:
            x._accumulate(dy @ w.data)

    out._backward = backward
    return out


def stack_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equal-length 1-D tensors into a [B, n] batch."""
    if not tensors:
        raise ShapeMismatch("stack_rows needs at least one tensor")
    out = _node(np.stack([t.data for t in tensors]), tuple(tensors))

    def backward():
        for i, t in enumerate(tensors):
            if t.requires_grad or t._parents:
                t._accumulate(out.grad[i])

    out._backward = backward
    return out


def cross_entropy_rows(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy over the rows of logits [B, n]."""
    ld = logits.data
    labels = np.asarray(labels, dtype=int)
    n_batch, n_class = ld.shape
    if labels.shape != (n_batch,):
        raise ShapeMismatch(f"labels {labels.shape} vs batch {n_batch}")
    if labels.min() < 0 or labels.max() >= n_class:
        raise LabelOutOfRange(f"labels outside [0, {n_class})")
    z = ld - ld.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n_batch)
    out = _node(np.array((lse - z[rows, labels]).mean()), (logits,))

    def backward():
        if logits.requires_grad or logits._parents:
            p = np.exp(z - lse[:, None])
            p[rows, labels] -= 1.0
            logits._accumulate(out.grad * p / n_batch)

    out._backward = backward
    return out


def grad_reverse(x: Tensor, scale: float) -> Tensor:
    """Identity forward; backward multiplies the incoming gradient by -scale."""
    out = _node(x.data, (x,))

    def backward():
        if x.requires_grad or x._parents:
            x._accumulate(-scale * out.grad)

    out._backward = backward
    return out


def reshape(x: Tensor, shape) -> Tensor:
    out = _node(x.data.reshape(shape), (x,))

    def backward():
        if x.requires_grad or x._parents:
            x._accumulate(out.grad.reshape(x.data.shape))

    out._backward = backward
    return out


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack two [C, L] tensors along the channel axis."""
    if a.data.shape[1] != b.data.shape[1]:
        raise ShapeMismatch(f"concat: lengths {a.data.shape} vs {b.data.shape}")
    ca = a.data.shape[0]
    out = _node(np.concatenate([a.data, b.data], axis=0), (a, b))

    def backward():
        if a.requires_grad or a._parents:
            a._accumulate(out.grad[:ca])
        if b.requires_grad or b._parents:
            b._accumulate(out.grad[ca:])

    out._backward = backward
    return out


def upsample_linear(x: Tensor, out_len: int) -> Tensor:
    """Linearly interpolate x [C, L] to [C, out_len] (align-corners)."""
    xd = x.data
    c, l = xd.shape
    if out_len < 1:
        raise ShapeMismatch("upsample_linear: out_len must be >= 1")
    if l == 1:
        pos = np.zeros(out_len)
    elif out_len == 1:
        pos = np.zeros(1)
    else:
        pos = np.arange(out_len) * (l - 1) / (out_len - 1)
    i0 = np.floor(pos).astype(int)
    i1 = np.minimum(i0 + 1, l - 1)
    w1 = pos - i0
    out = _node(xd[:, i0] * (1.0 - w1) + xd[:, i1] * w1, (x,))

    def backward():
        if x.requires_grad or x._parents:
            dx = np.zeros_like(xd)
            np.add.at(dx, (slice(None), i0), out.grad * (1.0 - w1))
            np.add.at(dx, (slice(None), i1), out.grad * w1)
            x._accumulate(dx)

    out._backward = backward
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """-log softmax(logits)[label], max-subtracted for stability."""
    n = logits.data.shape[0]
    if not 0 <= label < n:
        raise LabelOutOfRange(f"label {label} outside [0, {n})")
    z = logits.data - logits.data.max()
    lse = math.log(np.exp(z).sum())
    out = _node(np.array(lse - z[label]), (logits,))

    def backward():
        if logits.requires_grad or logits._parents:
            p = np.exp(z - lse)
            p[label] -= 1.0
            logits._accumulate(out.grad * p)

    out._backward = backward
    return out


def mse(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error against a constant target."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.data.shape != t.shape:
        raise ShapeMismatch(f"mse: {pred.data.shape} vs {t.shape}")
    diff = pred.data - t
    out = _node(np.array((diff ** 2).mean()), (pred,))

    def backward():
        if pred.requires_grad or pred._parents:
            pred._accumulate(out.grad * 2.0 * diff / diff.size)

    out._backward = backward
    return out


def scale(x: Tensor, factor: float) -> Tensor:
    out = _node(x.data * factor, (x,))

    def backward():
        if x.requires_grad or x._parents:
            x._accumulate(out.grad * factor)

    out._backward = backward
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"add: {a.data.shape} vs {b.data.shape}")
    out = _node(a.data + b.data, (a, b))

    def backward():
        if a.requires_grad or a._parents:
            a._accumulate(out.grad)
        if b.requires_grad or b._parents:
            b._accumulate(out.grad)

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# parameters, init, optimizer
# ---------------------------------------------------------------------------

class ParamStore:
    """Named parameter tensors with deterministic (sorted-name) iteration."""

    def __init__(self):
        self._params: Dict[str, Tensor] = {}
        self._sorted: Optional[List[str]] = None

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        array = np.asarray(array)
        if array.dtype not in (np.float32, np.float64):
            array = array.astype(np.float64)
        t = Tensor(array, requires_grad=True)
        self._params[name] = t
        self._sorted = None
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> List[str]:
        if self._sorted is None:
            self._sorted = sorted(self._params)
        return self._sorted

    def items(self):
        for name in self.names():
            yield name, self._params[name]

    def zero_grad(self) -> None:
        for _, t in self.items():
            t.zero_grad()

    def scale_grads(self, factor: float) -> None:
        for _, t in self.items():
            if t.grad is not None:
                t.grad *= factor

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, t in self.items():
            out.add(name, t.data.copy())
        return out


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int,
                    dtype=np.float64) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def bias_uniform(rng: np.random.Generator, n: int, fan_in: int,
                 dtype=np.float64) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=n).astype(dtype)


class Adam:
    """Bias-corrected Adam over a ParamStore, fixed update order."""

    def __init__(self, params: ParamStore, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self._v = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def adam_step(params: ParamStore, opt: Adam) -> None:
    """One optimizer step on populated gradients (thin functional wrapper)."""
    opt.step()


# ---------------------------------------------------------------------------
# checkpoint format: magic "BFIKI\0", u32 version, then per parameter
# (u32 name length, name, u32 rank, u32 dims..., f32 little-endian data),
# parameters sorted by name.
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"BFIKI\x00"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str, params: ParamStore) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        for name, t in params.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", t.data.ndim))
            for d in t.data.shape:
                fh.write(struct.pack("<I", d))
            fh.write(np.asarray(t.data, dtype="<f4").tobytes())


def load_checkpoint(path: str) -> ParamStore:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:6] != CHECKPOINT_MAGIC:
        raise CheckpointVersionMismatch(f"{path}: not a BFIKI checkpoint")
    (version,) = struct.unpack_from("<I", blob, 6)
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionMismatch(
            f"{path}: version {version}, expected {CHECKPOINT_VERSION}")
    params = ParamStore()
    off = 10
    while off < len(blob):
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", blob, off) if rank else ()
        off += 4 * rank
        count = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
        off += 4 * count
        params.add(name, data.reshape(dims).astype(np.float64))
    return params
