"""Named parameter tensors and their versioned binary file format.

Layout (all little-endian): magic ``VSYNC``, format version u32, seed i64,
record count u32, then per record: name length u16, UTF-8 name, rank u32,
dims u32 each, raw float64 values.  Round trips are bit exact.
"""

from __future__ import annotations

import struct
from typing import Iterator

import numpy as np

from .errors import DataError
from .tensor import Tensor

MAGIC = b"VSYNC"
FORMAT_VERSION = 1


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ParamSet:
    """Ordered mapping of unique names to parameter tensors."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = data if isinstance(data, Tensor) else Tensor(data)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()

    def save(self, path):
        arrays = {name: t.data for name, t in self._params.items()}
        write_array_file(path, arrays, self.seed)

    @classmethod
    def load(cls, path) -> "ParamSet":
        arrays, seed = read_array_file(path)
        ps = cls(seed)
        for name, arr in arrays.items():
            ps.add(name, arr)
        return ps

    def load_values_from(self, other: "ParamSet"):
        """Copy values by name; shapes must match the existing layout."""
        if set(other.names()) != set(self.names()):
            raise DataError(
                f"parameter names do not match: have {sorted(self.names())}, "
                f"file has {sorted(other.names())}"
            )
        for name, t in self._params.items():
            src = other[name]
            if src.data.shape != t.data.shape:
                raise DataError(
                    f"parameter {name!r} has shape {src.data.shape}, expected {t.data.shape}"
                )
            t.data = src.data.copy()
        self.seed = other.seed


def write_array_file(path, arrays: dict[str, np.ndarray], seed: int):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Iq", FORMAT_VERSION, int(seed)))
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_array_file(path) -> tuple[dict[str, np.ndarray], int]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:5] != MAGIC:
        raise DataError(f"{path}: not a VSYNC parameter file")
    off = 5
    version, seed = struct.unpack_from("<Iq", raw, off)
    off += 12
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {version}")
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", raw, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(dims)
        off += 8 * n
        arrays[name] = arr.astype(np.float64)  # own, writable copy
    if off != len(raw):
        raise DataError(f"{path}: {len(raw) - off} trailing bytes after last record")
    return arrays, seed
