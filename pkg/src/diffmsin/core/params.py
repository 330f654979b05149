"""Named parameter storage and the binary checkpoint format."""
from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path
from typing import Iterator

import numpy as np

from ..errors import ConfigError, ContractError, IngestionError
from .tensor import Tensor

MAGIC = b"DMSN"
VERSION = 1


class ParamStore:
    """Ordered map from dotted parameter path to a trainable ``Tensor``.

    ``subtree(prefix)`` returns a view sharing the same tensors, addressed by
    names relative to ``prefix``.
    """

    def __init__(self, _root: "OrderedDict[str, Tensor] | None" = None, _prefix: str = ""):
        self._root: OrderedDict[str, Tensor] = OrderedDict() if _root is None else _root
        self._prefix = _prefix

    def _full(self, name: str) -> str:
        return f"{self._prefix}{name}"

    def add(self, name: str, value) -> Tensor:
        full = self._full(name)
        if full in self._root:
            raise ConfigError(f"duplicate parameter name {full!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=full)
        self._root[full] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._root[self._full(name)]
        except KeyError:
            raise KeyError(f"no parameter {self._full(name)!r}") from None

    def __contains__(self, name: str) -> bool:
        return self._full(name) in self._root

    def subtree(self, prefix: str) -> "ParamStore":
        return ParamStore(self._root, self._full(prefix.rstrip(".") + "."))

    def items(self) -> Iterator[tuple[str, Tensor]]:
        n = len(self._prefix)
        for k, v in self._root.items():
            if k.startswith(self._prefix):
                yield k[n:], v

    def names(self) -> list[str]:
        return [k for k, _ in self.items()]

    def tensors(self) -> list[Tensor]:
        return [v for _, v in self.items()]

    def __len__(self):
        return sum(1 for _ in self.items())

    def num_parameters(self) -> int:
        return sum(t.size for t in self.tensors())

    def zero_grad(self) -> None:
        for t in self.tensors():
            t.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        mine = dict(self.items())
        if set(mine) != set(snap):
            missing = sorted(set(mine) ^ set(snap))
            raise ContractError(f"snapshot does not match store: {missing[:5]}")
        for k, arr in snap.items():
            t = mine[k]
            if t.shape != arr.shape:
                raise ContractError(f"shape mismatch for {k}: {t.shape} vs {arr.shape}")
            t.data = arr.copy()

    # -- checkpoint file ------------------------------------------------------
    def save(self, path) -> None:
        save_checkpoint(self.snapshot(), path)

    def load(self, path) -> None:
        self.restore(load_checkpoint(path))


def save_checkpoint(arrays: dict[str, np.ndarray], path) -> None:
    """Little-endian: magic, u32 version, u32 count, then per entry
    (u16 name length, name, u8 rank, u32 extents, f64 payload)."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype=np.float64)
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f8").tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise IngestionError(f"{path}: not a DMSN checkpoint")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise IngestionError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        out[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).astype(np.float64).reshape(shape)
        pos += 8 * n
    if pos != len(buf):
        raise IngestionError(f"{path}: {len(buf) - pos} trailing bytes")
    return out
