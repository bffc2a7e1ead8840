"""Parameters, recurrent cells, positional encoding, Adam and gradient checking.

Cells are plain functions of a parameter mapping ``P`` (name -> array) so the
same code runs on torch tensors (training, scoring, autograd) and on numpy
arrays (fast sampling). Inputs may carry any number of leading batch axes.

Gate layouts:

* LSTM ``wx`` (4d, in), ``wh`` (4d, d), ``b`` (4d): rows ordered i, f, g, o.
* Tree-LSTM ``wl`` (5d, dl), ``wr`` (5d, dr): rows ordered i, fL, fR, g, o;
  ``b`` (4d) ordered i, f, g, o, the forget bias being shared by both forget
  gates. When the right child has a different width, ``proj`` (d, dr) maps
  its cell state into the output width.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, NamedTuple

import numpy as np
import torch
import torch.nn.functional as F
from scipy.special import expit

__all__ = [
    "State",
    "ParameterStore",
    "LSTMCell",
    "TreeLSTMCell",
    "MLP",
    "lstm_step",
    "lstm_gates",
    "treelstm_merge",
    "mlp_forward",
    "elu",
    "positional_encoding",
    "adam_step",
    "NonFiniteGradientError",
    "grad_check",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
]


class State(NamedTuple):
    h: object
    c: object


# ---------------------------------------------------------------- backend ops

def _is_torch(x) -> bool:
    return isinstance(x, torch.Tensor)


def sigmoid(x):
    return torch.sigmoid(x) if _is_torch(x) else expit(x)


def log_sigmoid(x):
    return F.logsigmoid(x) if _is_torch(x) else -np.logaddexp(0.0, -x)


def tanh(x):
    return torch.tanh(x) if _is_torch(x) else np.tanh(x)


def elu(x, alpha: float = 1.0):
    if _is_torch(x):
        return F.elu(x, alpha=alpha)
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, x, alpha * np.expm1(np.minimum(x, 0.0)))


def softplus(x):
    if _is_torch(x):
        return torch.logaddexp(x, torch.zeros_like(x))
    return np.logaddexp(0.0, x)


def cat(xs, axis: int = -1):
    if _is_torch(xs[0]):
        return torch.cat(xs, dim=axis)
    return np.concatenate(xs, axis=axis)


# ---------------------------------------------------------------- parameters

class ParameterStore:
    """Named parameters with gradients and Adam moments.

    Parameters are torch leaf tensors with ``requires_grad``; their ``.grad``
    is the gradient accumulator. ``numpy()`` returns a cached read-only view
    for the numpy samplers; the cache is invalidated after every update.
    """

    def __init__(self, dtype: torch.dtype = torch.float64):
        self.dtype = dtype
        self.params: dict[str, torch.Tensor] = {}
        self.m: dict[str, torch.Tensor] = {}
        self.v: dict[str, torch.Tensor] = {}
        self.step = 0
        self._np_cache: dict[str, np.ndarray] | None = None

    def add(self, name: str, value: np.ndarray | torch.Tensor) -> torch.Tensor:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already exists")
        t = torch.as_tensor(np.asarray(value), dtype=self.dtype).clone().requires_grad_(True)
        self.params[name] = t
        self.m[name] = torch.zeros_like(t, requires_grad=False)
        self.v[name] = torch.zeros_like(t, requires_grad=False)
        self._np_cache = None
        return t

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def numel(self) -> int:
        return sum(p.numel() for p in self.params.values())

    def numpy(self) -> dict[str, np.ndarray]:
        if self._np_cache is None:
            self._np_cache = {k: p.detach().numpy().copy() for k, p in self.params.items()}
            for arr in self._np_cache.values():
                arr.flags.writeable = False
        return self._np_cache

    def invalidate(self) -> None:
        self._np_cache = None

    def set_value(self, name: str, value) -> None:
        with torch.no_grad():
            self.params[name].copy_(torch.as_tensor(np.asarray(value), dtype=self.dtype))
        self._np_cache = None

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grads(self) -> dict[str, torch.Tensor]:
        return {k: (p.grad if p.grad is not None else torch.zeros_like(p)) for k, p in self.params.items()}

    def to_dtype(self, dtype: torch.dtype) -> "ParameterStore":
        out = ParameterStore(dtype)
        for k, p in self.params.items():
            out.add(k, p.detach().numpy())
            out.m[k] = self.m[k].to(dtype)
            out.v[k] = self.v[k].to(dtype)
        out.step = self.step
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Parameters followed by Adam moments, in a fixed order."""
        out = {k: p.detach().numpy() for k, p in self.params.items()}
        out.update({f"adam.m/{k}": t.numpy() for k, t in self.m.items()})
        out.update({f"adam.v/{k}": t.numpy() for k, t in self.v.items()})
        return out


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------- cells

def lstm_step(x, s: State, wx, wh, b) -> State:
    return lstm_gates(x @ wx.T + s.h @ wh.T + b, s.c)


def lstm_gates(z, c_prev) -> State:
    """LSTM state update from preactivations ``z`` (gates i, f, g, o)."""
    d = c_prev.shape[-1]
    i = sigmoid(z[..., :d])
    f = sigmoid(z[..., d:2 * d])
    g = tanh(z[..., 2 * d:3 * d])
    o = sigmoid(z[..., 3 * d:])
    c = f * c_prev + i * g
    return State(o * tanh(c), c)


def treelstm_merge(left: State, right: State, wl, wr, b, proj=None) -> State:
    d = left.h.shape[-1]
    z = left.h @ wl.T + right.h @ wr.T
    bi, bf, bg, bo = b[:d], b[d:2 * d], b[2 * d:3 * d], b[3 * d:]
    i = sigmoid(z[..., :d] + bi)
    fl = sigmoid(z[..., d:2 * d] + bf)
    fr = sigmoid(z[..., 2 * d:3 * d] + bf)
    g = tanh(z[..., 3 * d:4 * d] + bg)
    o = sigmoid(z[..., 4 * d:] + bo)
    cr = right.c if proj is None else right.c @ proj.T
    c = i * g + fl * left.c + fr * cr
    return State(o * tanh(c), c)


def mlp_forward(x, weights: list, biases: list, alpha: float = 1.0):
    for k, (w, b) in enumerate(zip(weights, biases)):
        x = x @ w.T + b
        if k < len(weights) - 1:
            x = elu(x, alpha)
    return x


@dataclass(frozen=True)
class LSTMCell:
    name: str
    in_dim: int
    hidden: int

    def init(self, store: ParameterStore, rng: np.random.Generator) -> None:
        d = self.hidden
        store.add(f"{self.name}.wx", _uniform(rng, (4 * d, self.in_dim), max(self.in_dim, 1)))
        store.add(f"{self.name}.wh", _uniform(rng, (4 * d, d), d))
        b = np.zeros(4 * d)
        b[d:2 * d] = 1.0
        store.add(f"{self.name}.b", b)

    def __call__(self, P: Mapping, x, s: State) -> State:
        n = self.name
        return lstm_step(x, s, P[f"{n}.wx"], P[f"{n}.wh"], P[f"{n}.b"])


@dataclass(frozen=True)
class TreeLSTMCell:
    name: str
    hidden: int
    right_dim: int | None = None

    @property
    def dr(self) -> int:
        return self.hidden if self.right_dim is None else self.right_dim

    def init(self, store: ParameterStore, rng: np.random.Generator) -> None:
        d, dr = self.hidden, self.dr
        store.add(f"{self.name}.wl", _uniform(rng, (5 * d, d), d))
        store.add(f"{self.name}.wr", _uniform(rng, (5 * d, dr), dr))
        b = np.zeros(4 * d)
        b[d:2 * d] = 1.0
        store.add(f"{self.name}.b", b)
        if dr != d:
            store.add(f"{self.name}.proj", _uniform(rng, (d, dr), dr))

    def __call__(self, P: Mapping, left: State, right: State) -> State:
        n = self.name
        proj = P[f"{n}.proj"] if self.dr != self.hidden else None
        return treelstm_merge(left, right, P[f"{n}.wl"], P[f"{n}.wr"], P[f"{n}.b"], proj)


@dataclass(frozen=True)
class MLP:
    name: str
    widths: tuple[int, ...]
    alpha: float = 1.0

    def init(self, store: ParameterStore, rng: np.random.Generator) -> None:
        for k, (a, b) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            store.add(f"{self.name}.w{k}", _uniform(rng, (b, a), a))
            store.add(f"{self.name}.b{k}", np.zeros(b))

    @property
    def depth(self) -> int:
        return len(self.widths) - 1

    def __call__(self, P: Mapping, x):
        ws = [P[f"{self.name}.w{k}"] for k in range(self.depth)]
        bs = [P[f"{self.name}.b{k}"] for k in range(self.depth)]
        return mlp_forward(x, ws, bs, self.alpha)


# ---------------------------------------------------------------- positional encoding

_PE_CACHE: dict[int, np.ndarray] = {}


def positional_encoding(pos: int | np.ndarray, d: int) -> np.ndarray:
    """Sinusoidal encoding: index 2k is sin(pos / 10000^(2k/d)), index 2k+1 the cosine."""
    pos_arr = np.asarray(pos, dtype=np.float64)
    if np.any(pos_arr < 0):
        raise ValueError("position must be nonnegative")
    freqs = _PE_CACHE.get(d)
    if freqs is None:
        k = np.arange(d) // 2
        freqs = 1.0 / np.power(10000.0, 2.0 * k / d)
        _PE_CACHE[d] = freqs
    ang = pos_arr[..., None] * freqs
    out = np.where(np.arange(d) % 2 == 0, np.sin(ang), np.cos(ang))
    return out


# ---------------------------------------------------------------- optimizer

class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"nonfinite gradient in parameter {name!r}")
        self.name = name


def adam_step(
    store: ParameterStore,
    lr: float | Callable[[str], float],
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float | Callable[[str], float] = 0.0,
    names: Iterable[str] | None = None,
) -> None:
    """One Adam update with bias correction and decoupled weight decay.

    ``lr`` and ``weight_decay`` may be per-parameter callables (parameter
    groups). Decay multiplies the parameter by ``1 - lr * decay`` before the
    moment step. Only ``names`` are updated when given; every gradient is
    zeroed afterwards.
    """
    selected = store.names() if names is None else list(names)
    for name in selected:
        g = store.params[name].grad
        if g is not None and not torch.isfinite(g).all():
            raise NonFiniteGradientError(name)
    store.step += 1
    t = store.step
    b1, b2 = betas
    with torch.no_grad():
        for name in selected:
            p = store.params[name]
            g = p.grad if p.grad is not None else torch.zeros_like(p)
            a = lr(name) if callable(lr) else lr
            lam = weight_decay(name) if callable(weight_decay) else weight_decay
            if lam:
                p.mul_(1.0 - a * lam)
            m, v = store.m[name], store.v[name]
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            mhat = m / (1.0 - b1 ** t)
            vhat = v / (1.0 - b2 ** t)
            p.sub_(a * mhat / (vhat.sqrt() + eps))
    store.zero_grad()
    store.invalidate()


# ---------------------------------------------------------------- gradient check

def grad_check(
    closure: Callable[[], torch.Tensor],
    store: ParameterStore,
    tolerance: float = 1e-4,
    coords: int = 64,
    seed: int = 0,
    floor: float = 1e-5,
    names: Iterable[str] | None = None,
) -> dict:
    """Compare autograd gradients with central finite differences.

    For each parameter, up to ``coords`` random coordinates (all if fewer) are
    perturbed by ``h = 1e-5 * max(1, |theta|)``. The relative error is
    ``|a - n| / max(|a|, |n|, floor)``. At the prescribed step the central
    difference carries roughly ``1e-16 * |loss| / h`` of roundoff, so
    coordinates whose gradient is below ``floor`` are judged on absolute
    rather than relative error.
    """
    if store.dtype != torch.float64:
        raise ValueError("gradient checks require a 64-bit store")
    rng = np.random.default_rng(seed)
    store.zero_grad()
    loss = closure()
    loss.backward()
    analytic = {k: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
                for k, p in store.params.items()}
    store.zero_grad()
    per_param: dict[str, float] = {}
    checked = 0
    for name in (store.names() if names is None else names):
        p = store.params[name]
        flat = p.detach().view(-1)
        size = flat.numel()
        idx = np.arange(size) if size <= coords else rng.choice(size, coords, replace=False)
        worst = 0.0
        for k in idx:
            k = int(k)
            orig = float(flat[k])
            h = 1e-5 * max(1.0, abs(orig))
            with torch.no_grad():
                flat[k] = orig + h
                fp = float(closure())
                flat[k] = orig - h
                fm = float(closure())
                flat[k] = orig
            num = (fp - fm) / (2 * h)
            a = float(analytic[name].view(-1)[k])
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, err)
            checked += 1
        per_param[name] = worst
    store.invalidate()
    max_err = max(per_param.values(), default=0.0)
    return {
        "loss": float(loss.detach()),
        "max_rel_err": max_err,
        "tolerance": tolerance,
        "passed": bool(max_err < tolerance),
        "coordinates": checked,
        "per_param": per_param,
    }


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"BIGGECKP"


class CheckpointError(IOError):
    pass


def save_checkpoint(path: str | Path, header: dict, arrays: Mapping[str, np.ndarray]) -> None:
    """Write ``magic | u64 header length | JSON header | raw little-endian f8 arrays``.

    The header gets an ``arrays`` list of ``[name, shape]`` pairs giving the
    order of the raw payload.
    """
    header = dict(header)
    header["arrays"] = [[k, list(np.shape(v))] for k, v in arrays.items()]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", data[8:16])
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    off = 16 + hlen
    arrays: dict[str, np.ndarray] = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if off + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated at array {name!r}")
        arrays[name] = np.frombuffer(data[off:off + nbytes], dtype="<f8").reshape(shape).copy()
        off += nbytes
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    return header, arrays


def store_from_arrays(arrays: Mapping[str, np.ndarray], step: int, dtype=torch.float64) -> ParameterStore:
    store = ParameterStore(dtype)
    for k, v in arrays.items():
        if not k.startswith("adam."):
            store.add(k, v)
    for k in store.names():
        if f"adam.m/{k}" in arrays:
            store.m[k] = torch.as_tensor(arrays[f"adam.m/{k}"], dtype=dtype).clone()
            store.v[k] = torch.as_tensor(arrays[f"adam.v/{k}"], dtype=dtype).clone()
    store.step = step
    return store
