"""Parameter management, Adam, and binary checkpoint serialization.

Checkpoint layout: an optional single-line JSON config header (UTF-8,
newline-terminated), followed by a binary parameter block:

* magic ``b"DMSKPRM1"``
* format version, uint32 little-endian
* dtype code, 1 byte: ``b"f"`` float32 or ``b"d"`` float64
* parameter count, uint32
* per parameter, in insertion order: name length (uint32), name bytes
  (UTF-8), rank (uint32), each dimension (uint64), raw values
  (little-endian, C order)

Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from typing import Iterator

import numpy as np

from .tensor import Tensor

MAGIC = b"DMSKPRM1"
FORMAT_VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): b"f", np.dtype(np.float64): b"d"}
_CODE_DTYPES = {b"f": np.dtype("<f4"), b"d": np.dtype("<f8")}


class ParameterStore:
    """Ordered collection of named trainable tensors.

    Names are unique; iteration order is insertion order and is the
    serialization order.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if not name:
            raise ValueError("parameter name must be non-empty")
        t = Tensor(data, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise KeyError(f"no parameter named {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def n_values(self) -> int:
        """Total scalar parameter count."""
        return sum(int(t.data.size) for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        """Overwrite parameter values in place; names and shapes must match exactly."""
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise ValueError(f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, t in self._params.items():
            arr = np.asarray(arrays[name])
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name!r}: {arr.shape} vs {t.data.shape}")
            t.data = arr.astype(t.data.dtype, copy=True)


class Adam:
    """Adam with bias correction, stepping every parameter in a store."""

    def __init__(self, store: ParameterStore, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got {(beta1, beta2)}")
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {name: np.zeros_like(p.data) for name, p in store.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in store.items()}

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, p in self.store.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def adam_step(optimizer: Adam) -> None:
    """Apply one Adam update from the gradients currently held in the store."""
    optimizer.step()


# ---- serialization -----------------------------------------------------------


def save_params(fh, params) -> None:
    """Write a parameter block to a binary file handle.

    ``params`` is a :class:`ParameterStore` or a name->array mapping.  All
    arrays must share one dtype (float32 or float64).
    """
    if isinstance(params, ParameterStore):
        items = [(name, t.data) for name, t in params.items()]
    else:
        items = [(name, np.asarray(a)) for name, a in params.items()]
    if not items:
        raise ValueError("refusing to serialize an empty parameter set")
    dtypes = {a.dtype for _, a in items}
    if len(dtypes) != 1:
        raise ValueError(f"parameters have mixed dtypes: {sorted(map(str, dtypes))}")
    dtype = dtypes.pop()
    if np.dtype(dtype) not in _DTYPE_CODES:
        raise ValueError(f"unsupported parameter dtype {dtype}")
    fh.write(MAGIC)
    fh.write(struct.pack("<I", FORMAT_VERSION))
    fh.write(_DTYPE_CODES[np.dtype(dtype)])
    fh.write(struct.pack("<I", len(items)))
    for name, arr in items:
        nb = name.encode("utf-8")
        fh.write(struct.pack("<I", len(nb)))
        fh.write(nb)
        fh.write(struct.pack("<I", arr.ndim))
        for dim in arr.shape:
            fh.write(struct.pack("<Q", dim))
        fh.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ValueError(f"truncated parameter block: wanted {n} bytes, got {len(buf)}")
    return buf


def load_params(fh) -> dict[str, np.ndarray]:
    """Read a parameter block written by :func:`save_params`."""
    magic = _read_exact(fh, len(MAGIC))
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}; not a parameter block")
    version = struct.unpack("<I", _read_exact(fh, 4))[0]
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {version}")
    code = _read_exact(fh, 1)
    if code not in _CODE_DTYPES:
        raise ValueError(f"unknown dtype code {code!r}")
    dtype = _CODE_DTYPES[code]
    count = struct.unpack("<I", _read_exact(fh, 4))[0]
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = struct.unpack("<I", _read_exact(fh, 4))[0]
        name = _read_exact(fh, name_len).decode("utf-8")
        if name in out:
            raise ValueError(f"duplicate parameter name {name!r} in block")
        rank = struct.unpack("<I", _read_exact(fh, 4))[0]
        shape = tuple(struct.unpack("<Q", _read_exact(fh, 8))[0] for _ in range(rank))
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = _read_exact(fh, n * dtype.itemsize)
        out[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    return out


def save_checkpoint(path, config: dict, params) -> None:
    """Write a model checkpoint: one JSON config line, then the parameter block."""
    header = json.dumps(config, sort_keys=True, ensure_ascii=False)
    if "\n" in header:
        raise ValueError("config header must serialize to a single line")
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8"))
        fh.write(b"\n")
        save_params(fh, params)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        header = bytearray()
        while True:
            ch = fh.read(1)
            if not ch:
                raise ValueError(f"{path}: no config header found")
            if ch == b"\n":
                break
            header.extend(ch)
        try:
            config = json.loads(header.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ValueError(f"{path}: malformed config header: {e}") from None
        if not isinstance(config, dict):
            raise ValueError(f"{path}: config header must be a JSON object")
        arrays = load_params(fh)
    return config, arrays
