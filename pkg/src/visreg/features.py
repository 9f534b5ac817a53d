"""Feature vectors: PCA energy reduction, cosine similarity, exact k-NN graphs
and the text/binary feature file formats."""
from __future__ import annotations

import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import FeatureStore

__all__ = [
    "SimilarityGraph", "PcaReducer", "cosine_similarity", "fit_pca", "apply_pca",
    "build_similarity_graph", "similarity_matrix", "read_features_text", "write_features_text",
    "read_features_binary", "write_features_binary", "read_features", "write_features",
]

_FEATURE_MAGIC = b"VFEA"


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.size} vs {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity is undefined for a zero-norm vector")
    # normalise before the dot product so the result is symmetric in (a, b)
    s = float((a / na) @ (b / nb))
    return min(1.0, max(-1.0, s))


def _unit_rows(features: FeatureStore) -> np.ndarray:
    zero = features.zero_rows
    if len(zero):
        raise ValueError(f"item {int(zero[0])} (id {int(features.ids[zero[0]])}) has a zero-norm feature vector")
    return features.vectors / features.norms[:, None]


def similarity_matrix(features: FeatureStore, other: FeatureStore | None = None) -> np.ndarray:
    """All-pairs cosine similarity, clipped to [-1, 1]."""
    a = _unit_rows(features)
    b = a if other is None else _unit_rows(other)
    return np.clip(a @ b.T, -1.0, 1.0)


@dataclass(frozen=True, eq=False)
class PcaReducer:
    mean: np.ndarray
    basis: np.ndarray  # (components, dim), orthonormal rows
    explained_variance: np.ndarray
    energy_kept: float
    degenerate: bool = False

    @property
    def n_components(self) -> int:
        return self.basis.shape[0]

    def inverse(self, reduced: np.ndarray) -> np.ndarray:
        return np.asarray(reduced) @ self.basis + self.mean


def _sign_fix(components: np.ndarray) -> np.ndarray:
    # largest-magnitude coefficient of each component is made positive
    if components.size == 0:
        return components
    idx = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(len(components)), idx])
    signs[signs == 0] = 1.0
    return components * signs[:, None]


def _pca(data: np.ndarray):
    mean = data.mean(axis=0)
    centered = data - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    var = s**2 / max(len(data) - 1, 1)
    return mean, var, _sign_fix(vt)


def fit_pca(features: FeatureStore | np.ndarray, energy: float = 0.99,
            n_components: int | None = None) -> PcaReducer:
    """Fit PCA keeping the fewest components whose explained variance
    ratio reaches ``energy``, or exactly ``n_components`` if given.

    Identical rows give a reducer with zero components and
    ``degenerate=True`` (a warning is emitted).
    """
    data = features.vectors if isinstance(features, FeatureStore) else np.asarray(features, dtype=float)
    if not 0 < energy <= 1:
        raise ValueError("energy must lie in (0, 1]")
    if len(data) < 2:
        raise ValueError("PCA needs at least 2 items")
    mean, var, comps = _pca(data)
    total = var.sum()
    scale = max(np.abs(data).max(), 1.0)
    if total <= (1e-12 * scale) ** 2:
        warnings.warn("all feature rows are identical; PCA keeps no components", RuntimeWarning)
        return PcaReducer(mean, np.zeros((0, data.shape[1])), np.zeros(0), 1.0, degenerate=True)
    ratio = np.cumsum(var) / total
    if n_components is None:
        k = int(np.searchsorted(ratio, energy - 1e-12) + 1)
    else:
        k = int(n_components)
    k = min(k, len(var))
    return PcaReducer(mean, comps[:k].copy(), var[:k].copy(), float(min(ratio[k - 1], 1.0)))


def apply_pca(reducer: PcaReducer, features: FeatureStore) -> FeatureStore:
    if features.dim != reducer.mean.size:
        raise ValueError(f"features have dim {features.dim}, reducer expects {reducer.mean.size}")
    return FeatureStore((features.vectors - reducer.mean) @ reducer.basis.T, features.ids)


@dataclass(frozen=True, eq=False)
class SimilarityGraph:
    """Per-item neighbour lists in CSR layout, sorted by similarity descending.

    ``neighbors(f)[j]`` is ``(indices[indptr[f] + j], sims[indptr[f] + j])``.
    """

    num_items: int
    k: int
    indptr: np.ndarray
    indices: np.ndarray
    sims: np.ndarray

    def neighbors(self, f: int) -> list[tuple[int, float]]:
        lo, hi = self.indptr[f], self.indptr[f + 1]
        return list(zip(self.indices[lo:hi].tolist(), self.sims[lo:hi].tolist()))

    @property
    def num_edges(self) -> int:
        return len(self.indices)

    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(source, target, similarity) arrays for every directed edge."""
        src = np.repeat(np.arange(self.num_items), np.diff(self.indptr))
        return src, self.indices, self.sims


def build_similarity_graph(features: FeatureStore, k: int = 50, chunk: int = 1024,
                           threads: int = 1) -> SimilarityGraph:
    """Exact cosine k-NN graph without self edges; ties go to the lower index.

    ``k = 0`` keeps every other item (the dense all-pairs formulation).
    Rows are processed in blocks of ``chunk``; the output does not depend on
    ``threads``.
    """
    n = features.num_items
    unit = _unit_rows(features)
    width = n - 1 if k == 0 else min(k, n - 1)
    indices = np.empty((n, width), dtype=np.int64)
    sims = np.empty((n, width))

    def block(lo):
        hi = min(lo + chunk, n)
        s = np.clip(unit[lo:hi] @ unit.T, -1.0, 1.0)
        rows = np.arange(hi - lo)
        keyed = -s
        keyed[rows, rows + lo] = np.inf  # self sorts last
        # stable sort keeps lower indices first among equal similarities
        order = np.argsort(keyed, axis=1, kind="stable")[:, :width]
        indices[lo:hi] = order
        sims[lo:hi] = np.take_along_axis(s, order, axis=1)

    starts = range(0, n, chunk)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(block, starts))
    else:
        for lo in starts:
            block(lo)
    indptr = np.arange(n + 1, dtype=np.int64) * width
    return SimilarityGraph(n, int(k), indptr, indices.ravel(), sims.ravel())


# ---------------------------------------------------------------------------
# file formats


def _fmt(x: float) -> str:
    return repr(float(x))


def write_features_text(path, features: FeatureStore) -> None:
    lines = [f"#dim {features.dim}"]
    for item_id, row in zip(features.ids.tolist(), features.vectors):
        lines.append(f"{item_id}\t" + ",".join(_fmt(x) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_features_text(path) -> FeatureStore:
    """Read ``#dim D`` followed by ``item_id<TAB>f1,...,fD`` lines."""
    ids, rows, dim = [], [], None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                key, _, val = line[1:].partition(" ")
                if key == "dim":
                    dim = int(val)
                continue
            try:
                item, _, rest = line.partition("\t")
                row = [float(x) for x in rest.split(",")] if rest else []
                ids.append(int(item))
            except ValueError as err:
                raise ValueError(f"{path}:{lineno}: malformed feature line ({err})") from None
            if dim is None:
                raise ValueError(f"{path}:{lineno}: missing '#dim D' header")
            if len(row) != dim:
                raise ValueError(f"{path}:{lineno}: expected {dim} values, got {len(row)}")
            rows.append(row)
    if dim is None:
        raise ValueError(f"{path}: missing '#dim D' header")
    return FeatureStore(np.array(rows, dtype=float).reshape(len(rows), dim), np.array(ids, dtype=np.uint64))


def write_features_binary(path, features: FeatureStore) -> None:
    rec = np.dtype([("id", "<u8"), ("v", "<f4", (features.dim,))])
    arr = np.empty(features.num_items, dtype=rec)
    arr["id"] = features.ids
    arr["v"] = features.vectors
    with open(path, "wb") as fh:
        fh.write(_FEATURE_MAGIC + struct.pack("<II", features.num_items, features.dim))
        fh.write(arr.tobytes())


def read_features_binary(path) -> FeatureStore:
    raw = Path(path).read_bytes()
    if raw[:4] != _FEATURE_MAGIC:
        raise ValueError(f"{path}: not a VFEA feature file")
    count, dim = struct.unpack_from("<II", raw, 4)
    rec = np.dtype([("id", "<u8"), ("v", "<f4", (dim,))])
    if len(raw) != 12 + count * rec.itemsize:
        raise ValueError(f"{path}: truncated or oversized feature file")
    arr = np.frombuffer(raw, dtype=rec, count=count, offset=12)
    return FeatureStore(arr["v"].astype(np.float64).reshape(count, dim), arr["id"].copy())


def read_features(path) -> FeatureStore:
    with open(path, "rb") as fh:
        head = fh.read(4)
    return read_features_binary(path) if head == _FEATURE_MAGIC else read_features_text(path)


def write_features(path, features: FeatureStore, binary: bool | None = None) -> None:
    if binary is None:
        binary = str(path).endswith((".bin", ".vfea"))
    (write_features_binary if binary else write_features_text)(path, features)
