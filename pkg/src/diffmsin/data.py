"""Synthetic multi-modal CTR data with planted common, modality-specific and
synergistic structure; file formats; leave-last-out splitting; batching."""
from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, IngestionError
from .features import TableEncoder, load_precomputed, write_precomputed
from .model import Batch

log = logging.getLogger(__name__)


@dataclass
class SyntheticSpec:
    n_users: int = 2000
    n_items: int = 5000
    min_len: int = 5
    seq_len: int = 50
    events_per_user: int = 5
    d_im: int = 512
    d_te: int = 512
    d_id: int = 16
    k_common: int = 4
    k_im_specific: int = 4
    k_te_specific: int = 4
    k_synergy: int = 2
    synergy_strength: float = 4.0
    pref_scale: float = 1.0
    bias: float = -5.0
    label_noise: float = 0.0
    noise_sigma: float = 0.1
    profile_cards: tuple = (2, 6)
    seed: int = 0

    def __post_init__(self):
        self.profile_cards = tuple(int(c) for c in self.profile_cards)
        self.validate()

    def validate(self) -> None:
        for name in ("n_users", "n_items", "min_len", "events_per_user", "d_im", "d_te", "d_id",
                     "k_common", "k_im_specific", "k_te_specific", "k_synergy"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 5 <= self.seq_len <= 50:
            raise ConfigError("seq_len must lie in [5, 50]")
        if self.min_len < 5:
            raise ConfigError("min_len must be >= 5 (shorter histories are filtered out)")
        if self.synergy_strength < 0:
            raise ConfigError("synergy_strength must be >= 0")
        if not 0 <= self.label_noise < 1:
            raise ConfigError("label_noise must lie in [0, 1)")
        if self.im_factors > self.d_im or self.te_factors > self.d_te:
            raise ConfigError(f"infeasible spec: {self.im_factors}/{self.te_factors} factors "
                              f"do not fit in d_im={self.d_im}/d_te={self.d_te}")
        if self.min_len + self.events_per_user > self.n_items:
            raise ConfigError("more clicks per user than items in the catalog")

    @property
    def im_factors(self) -> int:
        return self.k_common + self.k_im_specific + self.k_synergy

    @property
    def te_factors(self) -> int:
        return self.k_common + self.k_te_specific + self.k_synergy

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["profile_cards"] = list(self.profile_cards)
        return d


PRESETS = {
    "synergy-small": dict(n_users=2000, n_items=5000),
    "synergy-med": dict(n_users=20000, n_items=5000),
    "tiny": dict(n_users=60, n_items=80, d_im=24, d_te=24, d_id=4, events_per_user=3),
}


def preset(name: str, **overrides) -> SyntheticSpec:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return SyntheticSpec(**{**PRESETS[name], **overrides})


# -- latent model ---------------------------------------------------------------
@dataclass
class Latents:
    common: np.ndarray       # (N, kc) +-1
    im_spec: np.ndarray      # (N, ki) +-1
    te_spec: np.ndarray      # (N, kt) +-1
    syn_im: np.ndarray       # (N, ks) +-1, +1 = active
    syn_te: np.ndarray       # (N, ks) +-1
    u_common: np.ndarray     # (U, kc)
    u_im: np.ndarray         # (U, ki)
    u_te: np.ndarray         # (U, kt)
    u_syn: np.ndarray        # (U, ks) in {0, 1}

    def to_json(self) -> dict:
        return {k: v.tolist() for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_json(cls, d: dict) -> "Latents":
        return cls(**{k: np.asarray(v, dtype=np.float64) for k, v in d.items()})


def click_logits(lat: Latents, spec: SyntheticSpec, users, items, drop: tuple = ()) -> np.ndarray:
    """Generative logit for (user, item) pairs; ``users``/``items`` broadcast.

    ``drop`` removes named terms: "common", "im", "te", "syn".
    """
    users = np.asarray(users)
    items = np.asarray(items)
    z = np.full(np.broadcast(users, items).shape, spec.bias, dtype=np.float64)
    if "common" not in drop:
        z = z + np.einsum("...k,...k->...", lat.u_common[users], lat.common[items])
    if "im" not in drop:
        z = z + np.einsum("...k,...k->...", lat.u_im[users], lat.im_spec[items])
    if "te" not in drop:
        z = z + np.einsum("...k,...k->...", lat.u_te[users], lat.te_spec[items])
    if "syn" not in drop:
        both = (lat.syn_im[items] > 0) & (lat.syn_te[items] > 0)
        z = z + spec.synergy_strength * np.einsum("...k,...k->...", lat.u_syn[users], both.astype(np.float64))
    return z


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _block_patterns(rng, n_factors: int, dim: int) -> list[tuple[slice, np.ndarray]]:
    b = dim // n_factors
    out = []
    for f in range(n_factors):
        pat = rng.choice([-1.0, 1.0], size=b)
        out.append((slice(f * b, (f + 1) * b), pat))
    return out


def _embed(values: np.ndarray, patterns, dim: int, sigma: float, rng) -> np.ndarray:
    emb = np.zeros((values.shape[0], dim))
    for f, (sl, pat) in enumerate(patterns):
        emb[:, sl] = values[:, f:f + 1] * pat
    return emb + rng.normal(0.0, sigma, size=emb.shape)


@dataclass
class SyntheticData:
    spec: SyntheticSpec
    latents: Latents
    im: np.ndarray
    te: np.ndarray
    profiles: np.ndarray     # (U, F) int
    clicks: np.ndarray       # (U, min_len + events) item ids in click order

    @property
    def encoder(self) -> TableEncoder:
        return TableEncoder(self.im, self.te)


def synthesize(spec: SyntheticSpec) -> SyntheticData:
    rng = np.random.default_rng(spec.seed)
    N, U = spec.n_items, spec.n_users
    sign = lambda *shape: rng.choice([-1.0, 1.0], size=shape)
    lat = Latents(
        common=sign(N, spec.k_common), im_spec=sign(N, spec.k_im_specific),
        te_spec=sign(N, spec.k_te_specific), syn_im=sign(N, spec.k_synergy), syn_te=sign(N, spec.k_synergy),
        u_common=rng.normal(0, spec.pref_scale, (U, spec.k_common)),
        u_im=rng.normal(0, spec.pref_scale, (U, spec.k_im_specific)),
        u_te=rng.normal(0, spec.pref_scale, (U, spec.k_te_specific)),
        u_syn=(rng.random((U, spec.k_synergy)) < 0.5).astype(np.float64),
    )
    im_pat = _block_patterns(rng, spec.im_factors, spec.d_im)
    te_pat = _block_patterns(rng, spec.te_factors, spec.d_te)
    im = _embed(np.hstack([lat.common, lat.im_spec, lat.syn_im]), im_pat, spec.d_im, spec.noise_sigma, rng)
    te = _embed(np.hstack([lat.common, lat.te_spec, lat.syn_te]), te_pat, spec.d_te, spec.noise_sigma, rng)

    cards = spec.profile_cards
    profiles = np.zeros((U, len(cards)), dtype=np.int64)
    # first profile field tracks the sign of the first common-factor preference
    profiles[:, 0] = (lat.u_common[:, 0] > 0).astype(np.int64) % cards[0]
    for f in range(1, len(cards)):
        profiles[:, f] = rng.integers(0, cards[f], size=U)

    L = spec.min_len + spec.events_per_user
    clicks = np.zeros((U, L), dtype=np.int64)
    items = np.arange(N)
    for start in range(0, U, 512):
        users = np.arange(start, min(U, start + 512))
        s = _sigmoid(click_logits(lat, spec, users[:, None], items[None, :]))
        p = (1 - spec.label_noise) * s / s.sum(axis=1, keepdims=True) + spec.label_noise / N
        for r, u in enumerate(users):
            clicks[u] = rng.choice(N, size=L, replace=False, p=p[r] / p[r].sum())
    return SyntheticData(spec=spec, latents=lat, im=im, te=te, profiles=profiles, clicks=clicks)


# -- interaction rows and splitting -------------------------------------------------
def interaction_rows(data: SyntheticData) -> list[dict]:
    """One positive row per labelled click; history is every earlier click."""
    spec = data.spec
    rows = []
    for u in range(spec.n_users):
        profile = [int(x) for x in data.profiles[u]]
        c = data.clicks[u]
        for j in range(spec.min_len, len(c)):
            rows.append({"user": u, "profile": profile, "seq": [int(x) for x in c[:j]],
                         "target": int(c[j]), "y": 1})
    return rows


def split_rows(rows: list[dict], n_items: int, seed: int = 0):
    """Per-user leave-last-out with one uniformly drawn unclicked negative per
    positive. Returns (train, test, n_excluded_users)."""
    rng = np.random.default_rng([seed, 7])
    by_user: dict[int, list[dict]] = {}
    for r in rows:
        by_user.setdefault(r["user"], []).append(r)
    train, test = [], []
    excluded = 0
    for u in sorted(by_user):
        events = by_user[u]
        if len(events) < 2:
            excluded += 1
            continue
        clicked = set()
        for r in events:
            clicked.update(r["seq"])
            clicked.add(r["target"])
        if len(clicked) >= n_items:
            raise ConfigError(f"user {u} clicked every item; no negatives available")
        for k, r in enumerate(events):
            while True:
                neg = int(rng.integers(0, n_items))
                if neg not in clicked:
                    break
            dest = test if k == len(events) - 1 else train
            dest.append(dict(r, y=1))
            dest.append(dict(r, target=neg, y=0))
    if excluded:
        log.info("excluded %d users with fewer than 2 interactions", excluded)
    return train, test, excluded


# -- in-memory dataset + batching ---------------------------------------------------
@dataclass
class SampleSet:
    user: np.ndarray
    profile: np.ndarray
    seqs: list
    target: np.ndarray
    y: np.ndarray
    keys: np.ndarray

    @classmethod
    def from_rows(cls, rows: list[dict], key_offset: int = 0) -> "SampleSet":
        return cls(
            user=np.array([r["user"] for r in rows], dtype=np.int64),
            profile=np.array([r["profile"] for r in rows], dtype=np.int64).reshape(len(rows), -1),
            seqs=[np.asarray(r["seq"], dtype=np.int64) for r in rows],
            target=np.array([r["target"] for r in rows], dtype=np.int64),
            y=np.array([r["y"] for r in rows], dtype=np.float64),
            keys=np.arange(key_offset, key_offset + len(rows), dtype=np.int64),
        )

    def __len__(self):
        return len(self.y)


@dataclass
class CtrDataset:
    encoder: TableEncoder
    n_items: int
    profile_cards: list
    train: SampleSet
    test: SampleSet
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_rows(cls, train_rows, test_rows, encoder, n_items, profile_cards, meta=None):
        return cls(encoder=encoder, n_items=n_items, profile_cards=list(profile_cards),
                   train=SampleSet.from_rows(train_rows), test=SampleSet.from_rows(test_rows, len(train_rows)),
                   meta=meta or {})

    def size(self, split: str) -> int:
        return len(getattr(self, split))

    def batches(self, split: str, batch_size: int, rng: np.random.Generator | None = None, max_len: int = 50):
        """Yield batches whose samples share one (truncated) history length.

        With ``rng`` the samples inside each length group and the order of the
        resulting batches are shuffled; otherwise order is by length, then key.
        """
        s: SampleSet = getattr(self, split)
        lengths = np.array([min(len(q), max_len) for q in s.seqs])
        chunks = []
        for n in np.unique(lengths):
            idx = np.flatnonzero(lengths == n)
            if rng is not None:
                idx = rng.permutation(idx)
            chunks.extend(idx[i:i + batch_size] for i in range(0, len(idx), batch_size))
        if rng is not None:
            chunks = [chunks[i] for i in rng.permutation(len(chunks))]
        for idx in chunks:
            yield self.make_batch(s, idx, max_len)

    def make_batch(self, s: SampleSet, idx, max_len: int = 50) -> Batch:
        id_seq = np.stack([s.seqs[i][-max_len:] for i in idx])
        target = s.target[idx]
        im_seq, te_seq = self.encoder.lookup(id_seq)
        t_im, t_te = self.encoder.lookup(target)
        return Batch(profile=s.profile[idx], id_seq=id_seq, target=target, im_seq=im_seq, te_seq=te_seq,
                     target_im=t_im, target_te=t_te, y=s.y[idx], keys=s.keys[idx])


def build_dataset(spec: SyntheticSpec) -> tuple[CtrDataset, SyntheticData]:
    data = synthesize(spec)
    train, test, _ = split_rows(interaction_rows(data), spec.n_items, seed=spec.seed)
    ds = CtrDataset.from_rows(train, test, data.encoder, spec.n_items, spec.profile_cards,
                              meta={"spec": spec.to_dict()})
    return ds, data


# -- ground-truth scorers ------------------------------------------------------------
def _user_norm(lat: Latents, spec: SyntheticSpec) -> np.ndarray:
    items = np.arange(spec.n_items)
    Z = np.empty(spec.n_users)
    for start in range(0, spec.n_users, 512):
        users = np.arange(start, min(spec.n_users, start + 512))
        Z[users] = _sigmoid(click_logits(lat, spec, users[:, None], items[None, :])).mean(axis=1)
    return Z


def _ratio(s, Z, spec):
    lam = spec.label_noise
    return np.log((1 - lam) * s / Z + lam)


def bayes_scores(data: SyntheticData, users, items) -> np.ndarray:
    """Log likelihood ratio of 'clicked next' versus 'uniform negative' under
    the generative process; Bayes-optimal for pooled AUC."""
    users, items = np.asarray(users), np.asarray(items)
    s = _sigmoid(click_logits(data.latents, data.spec, users, items))
    return _ratio(s, _user_norm(data.latents, data.spec)[users], data.spec)


def single_modality_scores(data: SyntheticData, users, items, modality: str) -> np.ndarray:
    """Bayes scorer that only sees the latents one modality reveals; the other
    modality's specific and synergy factors are averaged over their prior."""
    if modality not in ("im", "te"):
        raise ConfigError("modality must be 'im' or 'te'")
    lat, spec = data.latents, data.spec
    users, items = np.asarray(users), np.asarray(items)
    other = "te" if modality == "im" else "im"
    base = click_logits(lat, spec, users, items, drop=(other, "syn"))
    k_other = spec.k_te_specific if other == "te" else spec.k_im_specific
    u_other = lat.u_te if other == "te" else lat.u_im
    seen_syn = lat.syn_im if modality == "im" else lat.syn_te
    combos = np.array(list(itertools.product([-1.0, 1.0], repeat=k_other + spec.k_synergy)))
    acc = np.zeros(base.shape)
    for c in combos:
        spec_part = u_other[users] @ c[:k_other]
        both = (seen_syn[items] > 0) & (c[k_other:] > 0)
        syn = spec.synergy_strength * (lat.u_syn[users] * both).sum(-1)
        acc += _sigmoid(base + spec_part + syn)
    s = acc / len(combos)
    return _ratio(s, _user_norm(lat, spec)[users], spec)


def fit_additive_logistic(data: SyntheticData, train: SampleSet, test: SampleSet) -> np.ndarray:
    """Logistic regression on per-factor (preference x attribute) products for
    the common and modality-specific factors, fitted on ``train``; returns test
    logits. No cross-modal feature is available to it."""
    from scipy.optimize import minimize

    lat = data.latents

    def feats(s: SampleSet):
        u, i = s.user, s.target
        return np.hstack([lat.u_common[u] * lat.common[i], lat.u_im[u] * lat.im_spec[i],
                          lat.u_te[u] * lat.te_spec[i], lat.syn_im[i], lat.syn_te[i],
                          np.ones((len(u), 1))])

    X, y = feats(train), train.y

    def nll(w):
        z = X @ w
        loss = np.logaddexp(0, z).sum() - y @ z
        grad = X.T @ (_sigmoid(z) - y)
        return loss / len(y), grad / len(y)

    w = minimize(nll, np.zeros(X.shape[1]), jac=True, method="L-BFGS-B").x
    return feats(test) @ w


# -- files --------------------------------------------------------------------------
@dataclass
class DatasetManifest:
    root: Path
    spec: dict
    files: dict
    checksum: str
    split: dict = field(default_factory=dict)

    def path(self, key: str) -> Path:
        return self.root / (self.files.get(key) or self.split[key])

    def to_json(self) -> dict:
        return {"spec": self.spec, "files": self.files, "checksum": self.checksum, "split": self.split}

    def write(self) -> Path:
        out = self.root / "manifest.json"
        out.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        return out


def _checksum(root: Path, names) -> str:
    h = hashlib.sha256()
    for name in names:
        h.update(name.encode())
        h.update((root / name).read_bytes())
    return h.hexdigest()


def write_rows(path, rows) -> None:
    with open(path, "w") as fh:
        for r in rows:
            fh.write(json.dumps({"user": int(r["user"]), "profile": [int(x) for x in r["profile"]],
                                 "seq": [int(x) for x in r["seq"]], "target": int(r["target"]),
                                 "y": int(r["y"])}) + "\n")


def read_rows(path) -> list[dict]:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            r = json.loads(line)
            missing = {"user", "profile", "seq", "target", "y"} - set(r)
            if missing:
                raise IngestionError(f"{path}:{lineno}: missing keys {sorted(missing)}", key=lineno)
            if r["y"] not in (0, 1):
                raise IngestionError(f"{path}:{lineno}: label must be 0 or 1", key=lineno)
            rows.append(r)
    return rows


def generate(spec: SyntheticSpec, out_dir) -> DatasetManifest:
    """Write embeddings, positive interactions and ground-truth latents, plus a
    manifest whose checksum covers all three files."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    data = synthesize(spec)
    files = {"embeddings": "embeddings.jsonl", "interactions": "interactions.jsonl", "latents": "latents.json"}
    write_precomputed(root / files["embeddings"], {i: (data.im[i], data.te[i]) for i in range(spec.n_items)},
                      spec.d_im, spec.d_te)
    write_rows(root / files["interactions"], interaction_rows(data))
    (root / files["latents"]).write_text(json.dumps(
        {"latents": data.latents.to_json(), "profiles": data.profiles.tolist(), "clicks": data.clicks.tolist()}))
    manifest = DatasetManifest(root=root, spec=spec.to_dict(), files=files,
                               checksum=_checksum(root, files.values()))
    manifest.write()
    return manifest


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise IngestionError(f"manifest {path} not found")
    raw = json.loads(path.read_text())
    m = DatasetManifest(root=path.parent, spec=raw["spec"], files=raw["files"], checksum=raw["checksum"],
                        split=raw.get("split", {}))
    if _checksum(m.root, m.files.values()) != m.checksum:
        raise IngestionError(f"{path}: checksum mismatch; dataset files were modified")
    return m


def split(manifest: DatasetManifest) -> tuple[Path, Path, int]:
    rows = read_rows(manifest.path("interactions"))
    spec = manifest.spec
    train, test, excluded = split_rows(rows, spec["n_items"], seed=spec.get("seed", 0))
    manifest.split = {"train": "train.jsonl", "test": "test.jsonl", "excluded_users": excluded}
    write_rows(manifest.root / "train.jsonl", train)
    write_rows(manifest.root / "test.jsonl", test)
    manifest.write()
    return manifest.root / "train.jsonl", manifest.root / "test.jsonl", excluded


def load_dataset(manifest_path) -> CtrDataset:
    m = load_manifest(manifest_path)
    if not m.split:
        split(m)
    spec = m.spec
    table = load_precomputed(m.path("embeddings"), spec["d_im"], spec["d_te"])
    missing = set(range(spec["n_items"])) - set(table)
    if missing:
        k = min(missing)
        raise IngestionError(f"embedding table lacks item {k}", key=k)
    enc = TableEncoder.from_mapping(table, spec["d_im"], spec["d_te"])
    return CtrDataset.from_rows(read_rows(m.root / m.split["train"]), read_rows(m.root / m.split["test"]),
                                enc, spec["n_items"], spec["profile_cards"], meta={"spec": spec})


def load_synthetic(manifest_path) -> SyntheticData:
    """Reconstruct the generator state (latents and embeddings) from files."""
    m = load_manifest(manifest_path)
    spec = SyntheticSpec(**m.spec)
    raw = json.loads(m.path("latents").read_text())
    table = load_precomputed(m.path("embeddings"), spec.d_im, spec.d_te)
    enc = TableEncoder.from_mapping(table, spec.d_im, spec.d_te)
    return SyntheticData(spec=spec, latents=Latents.from_json(raw["latents"]), im=enc.im, te=enc.te,
                         profiles=np.asarray(raw["profiles"], dtype=np.int64),
                         clicks=np.asarray(raw["clicks"], dtype=np.int64))
