"""Parameter storage, SGD with global-norm clipping, and the D2M1 file format."""
from __future__ import annotations

import io
import json
import struct

import numpy as np

from .tensor import DEFAULT_DTYPE, Tensor

MAGIC = b"D2M1"


class TrainingError(RuntimeError):
    pass


class ParamStore:
    """Named trainable tensors plus the current learning rate."""

    def __init__(self, seed=0, init_scale=0.1, lr=1.0):
        self.params: dict[str, Tensor] = {}
        self.rng = np.random.default_rng(seed)
        self.init_scale = init_scale
        self.lr = lr

    def add(self, name, shape, init="uniform"):
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        if init == "zeros":
            data = np.zeros(shape, dtype=DEFAULT_DTYPE)
        else:
            data = self.rng.uniform(-self.init_scale, self.init_scale, size=shape).astype(DEFAULT_DTYPE)
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        return t

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def n_params(self):
        return sum(p.data.size for p in self.params.values())

    def state(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state):
        for k, v in state.items():
            self.params[k].data = np.asarray(v, dtype=self.params[k].dtype).reshape(self.params[k].shape)

    def astype(self, dtype):
        for p in self.params.values():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self


def grad_norm(store):
    total = 0.0
    for p in store.params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))


def sgd_step(store, lr=None, clip=5.0):
    """Clip gradients to global norm ``clip``, apply ``p -= lr * g``, zero grads.

    Returns the pre-clipping gradient norm.
    """
    lr = store.lr if lr is None else lr
    for name, p in store.params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
    norm = grad_norm(store)
    scale = 1.0
    if clip is not None and clip > 0 and norm > clip:
        scale = clip / norm
    for p in store.params.values():
        if p.grad is not None:
            p.data -= (lr * scale) * p.grad.astype(p.dtype)
            p.grad = None
    return norm


class PlateauHalver:
    """Halve the learning rate whenever the validation score fails to improve."""

    def __init__(self, store, factor=0.5):
        self.store = store
        self.factor = factor
        self.best = None

    def step(self, value):
        """Record a validation perplexity; returns True if the rate was cut."""
        if self.best is None or value < self.best:
            self.best = value
            return False
        self.store.lr *= self.factor
        return True


# -- D2M1 ------------------------------------------------------------------
def dumps_params(state, hyper=None):
    """Serialize ``{name: array}`` as magic, u32 header length, JSON header, f32 payload."""
    names = list(state)
    header = {
        "names": names,
        "shapes": [list(np.shape(state[n])) for n in names],
        "dtype": "<f4",
        "hyperparameters": hyper or {},
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(hbytes)))
    buf.write(hbytes)
    for n in names:
        buf.write(np.ascontiguousarray(state[n], dtype="<f4").tobytes())
    return buf.getvalue()


def loads_params(data):
    """Inverse of :func:`dumps_params`; returns ``(state, hyperparameters)``."""
    if data[:4] != MAGIC:
        raise ValueError(f"not a D2M1 block (magic {data[:4]!r})")
    (hlen,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8:8 + hlen].decode("utf-8"))
    off = 8 + hlen
    state = {}
    for name, shape in zip(header["names"], header["shapes"]):
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(shape)
        state[name] = arr.astype(np.float32)
        off += 4 * n
    if off != len(data):
        raise ValueError(f"D2M1 payload length mismatch: {len(data) - off} trailing bytes")
    return state, header["hyperparameters"]


def save_params(path, state, hyper=None):
    with open(path, "wb") as fh:
        fh.write(dumps_params(state, hyper))


def load_params(path):
    with open(path, "rb") as fh:
        return loads_params(fh.read())
