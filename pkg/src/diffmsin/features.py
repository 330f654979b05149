"""Per-modality embedding inputs and target-conditioned attention pooling."""
from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import tensor as T
from .core.nn import glorot, linear
from .core.params import ParamStore
from .core.tensor import Tensor
from .errors import DimensionError, EmptySequenceError, IngestionError

log = logging.getLogger(__name__)


class Modality(str, enum.Enum):
    ID = "id"
    IM = "im"
    TE = "te"


MODALITIES = (Modality.ID, Modality.IM, Modality.TE)


@dataclass
class EmbeddingSequence:
    modality: Modality
    vectors: np.ndarray  # (n, d) or batched (B, n, d)

    def __post_init__(self):
        if self.vectors.shape[-2] < 1:
            raise EmptySequenceError(f"{self.modality.value} sequence is empty")

    @property
    def length(self) -> int:
        return self.vectors.shape[-2]


@dataclass
class TargetItem:
    raw_id: int
    id_embed: np.ndarray
    im_embed: np.ndarray
    te_embed: np.ndarray


# -- DIN local activation unit ------------------------------------------------
def init_local_activation(store: ParamStore, prefix: str, dim: int, hidden: int,
                          rng: np.random.Generator) -> ParamStore:
    """Score net on [item, target, item*target] -> hidden (relu) -> 1."""
    sub = store.subtree(prefix)
    sub.add("layer0.weight", glorot(rng, 3 * dim, hidden))
    sub.add("layer0.bias", np.zeros(hidden))
    sub.add("layer1.weight", glorot(rng, hidden, 1))
    sub.add("layer1.bias", np.zeros(1))
    return sub


def attention_scores(seq: Tensor, target: Tensor, params: ParamStore) -> Tensor:
    """Raw scores (B, n) for seq (B, n, d) against target (B, d).

    The first layer acts on the concatenation [s, t, s*t]; it is evaluated
    blockwise so the target block is computed once per sample.
    """
    d = seq.shape[-1]
    if target.shape[-1] != d:
        raise DimensionError(f"sequence dim {d} != target dim {target.shape[-1]}")
    if seq.shape[-2] == 0:
        raise EmptySequenceError("attention over an empty sequence")
    W = params["layer0.weight"]
    h = linear(seq, T.getitem(W, slice(0, d)))
    h = h + T.reshape(linear(target, T.getitem(W, slice(d, 2 * d)), params["layer0.bias"]),
                      (target.shape[0], 1, -1))
    tb = T.reshape(target, (target.shape[0], 1, d))
    h = h + linear(seq * tb, T.getitem(W, slice(2 * d, 3 * d)))
    h = T.relu(h)
    s = linear(h, params["layer1.weight"], params["layer1.bias"])
    return T.reshape(s, s.shape[:-1])


def target_attention(seq, target, params: ParamStore, return_weights: bool = False):
    """Scale each sequence row by its softmax attention weight toward the target.

    Accepts unbatched (n, d)/(d,) or batched (B, n, d)/(B, d) inputs.
    """
    seq, target = T.as_tensor(seq), T.as_tensor(target)
    unbatched = seq.ndim == 2
    if unbatched:
        seq = T.reshape(seq, (1,) + seq.shape)
        target = T.reshape(target, (1, -1))
    w = T.softmax(attention_scores(seq, target, params), axis=-1)
    out = seq * T.reshape(w, w.shape + (1,))
    if unbatched:
        out = T.reshape(out, out.shape[1:])
        w = T.reshape(w, w.shape[1:])
    return (out, w) if return_weights else out


def sum_pool(weighted) -> Tensor:
    """Sum over the sequence axis (second to last)."""
    weighted = T.as_tensor(weighted)
    if weighted.ndim < 2 or weighted.shape[-2] < 1:
        raise EmptySequenceError("sum_pool needs at least one row")
    return T.tsum(weighted, axis=-2)


# -- embedding providers -----------------------------------------------------
class EncoderProvider:
    """Source of frozen image/text embeddings keyed by item id."""

    d_im: int
    d_te: int

    def lookup(self, items) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


class TableEncoder(EncoderProvider):
    """Dense tables indexed by item id (rows 0..n_items-1)."""

    def __init__(self, im: np.ndarray, te: np.ndarray):
        if im.shape[0] != te.shape[0]:
            raise IngestionError("image and text tables differ in row count")
        self.im = np.ascontiguousarray(im, dtype=np.float64)
        self.te = np.ascontiguousarray(te, dtype=np.float64)
        self.d_im = im.shape[1]
        self.d_te = te.shape[1]

    @classmethod
    def from_mapping(cls, table: dict[int, tuple[np.ndarray, np.ndarray]], d_im: int, d_te: int):
        n = max(table) + 1 if table else 0
        im = np.zeros((n, d_im))
        te = np.zeros((n, d_te))
        for k, (a, b) in table.items():
            im[k] = a
            te[k] = b
        return cls(im, te)

    def lookup(self, items):
        items = np.asarray(items, dtype=np.int64)
        return self.im[items], self.te[items]


def write_precomputed(path, table: dict[int, tuple], d_im: int, d_te: int) -> None:
    """Header line {"d_im", "d_te"} followed by one {"item", "im", "te"} object per item."""
    with open(path, "w") as fh:
        fh.write(json.dumps({"d_im": d_im, "d_te": d_te}) + "\n")
        for key in sorted(table):
            im, te = table[key]
            fh.write(json.dumps({"item": int(key), "im": [float(x) for x in im],
                                 "te": [float(x) for x in te]}) + "\n")


def load_precomputed(manifest_path, d_im: int | None = None, d_te: int | None = None
                     ) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    path = Path(manifest_path)
    if not path.exists():
        raise IngestionError(f"embedding manifest {path} does not exist")
    with open(path) as fh:
        header_line = fh.readline()
        if not header_line.strip():
            log.warning("embedding manifest %s is empty", path)
            return {}
        header = json.loads(header_line)
        try:
            hd_im, hd_te = int(header["d_im"]), int(header["d_te"])
        except (KeyError, TypeError) as exc:
            raise IngestionError(f"{path}: header must declare d_im and d_te") from exc
        if (d_im is not None and d_im != hd_im) or (d_te is not None and d_te != hd_te):
            raise IngestionError(f"{path}: header dims ({hd_im}, {hd_te}) do not match config ({d_im}, {d_te})")
        table: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            row = json.loads(line)
            key = row.get("item")
            if key is None:
                raise IngestionError(f"{path}:{lineno}: row without 'item' key", key=None)
            im = np.asarray(row.get("im", []), dtype=np.float64)
            te = np.asarray(row.get("te", []), dtype=np.float64)
            if im.shape != (hd_im,) or te.shape != (hd_te,):
                raise IngestionError(
                    f"{path}:{lineno}: item {key} has dims ({im.size}, {te.size}), expected ({hd_im}, {hd_te})",
                    key=key)
            if key in table:
                raise IngestionError(f"{path}:{lineno}: duplicate item {key}", key=key)
            table[int(key)] = (im, te)
    if not table:
        log.warning("embedding manifest %s has no rows", path)
    return table
