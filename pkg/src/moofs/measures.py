"""Information-theoretic and statistical feature-quality measures.

All information quantities are in bits and are estimated from histograms.
A column with at most ``bins`` distinct values (or a nominal column) is used
as-is; anything else is cut into ``bins`` equal-width bins over its range.
"""

from __future__ import annotations

import hashlib
import io
import logging
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .dataset import CATEGORICAL, NormalizedView, NumericDataset, normalize_minmax

logger = logging.getLogger(__name__)

DEFAULT_BINS = 20


def discretize(column, bins: int = DEFAULT_BINS, categorical: bool = False) -> np.ndarray:
    """Map a column to integer bin codes ``0..k-1``."""
    x = np.asarray(column, dtype=np.float64).ravel()
    if bins < 1:
        raise ValueError("bins must be >= 1")
    uniq, inverse = np.unique(x, return_inverse=True)
    if categorical or len(uniq) <= bins:
        return inverse.astype(np.int64)
    lo, hi = x.min(), x.max()
    codes = np.floor((x - lo) / (hi - lo) * bins).astype(np.int64)
    return np.minimum(codes, bins - 1)


def _entropy_of_counts(counts: np.ndarray) -> float:
    counts = counts[counts > 0]
    if counts.size == 0:
        return 0.0
    p = counts / counts.sum()
    return float(-(p * np.log2(p)).sum())


def _joint_counts(cx: np.ndarray, cy: np.ndarray) -> np.ndarray:
    kx, ky = int(cx.max()) + 1, int(cy.max()) + 1
    return np.bincount(cx * ky + cy, minlength=kx * ky).reshape(kx, ky)


def _mi_from_joint(joint: np.ndarray) -> float:
    n = joint.sum()
    pxy = joint / n
    px = pxy.sum(axis=1, keepdims=True)
    py = pxy.sum(axis=0, keepdims=True)
    nz = pxy > 0
    mi = float((pxy[nz] * np.log2(pxy[nz] / (px @ py)[nz])).sum())
    return max(mi, 0.0)


def _ig_from_joint(joint: np.ndarray) -> float:
    """H(rows) minus the size-weighted entropy of rows within each column group."""
    n = joint.sum()
    parent = _entropy_of_counts(joint.sum(axis=1))
    children = 0.0
    for v in range(joint.shape[1]):
        child = joint[:, v]
        size = child.sum()
        if size:
            children += size / n * _entropy_of_counts(child)
    return parent - children


def entropy(column, bins: int = DEFAULT_BINS, categorical: bool = False) -> float:
    """Shannon entropy of the binned column."""
    codes = discretize(column, bins, categorical)
    return _entropy_of_counts(np.bincount(codes))


def mutual_information(x, y, bins: int = DEFAULT_BINS,
                       x_categorical: bool = False, y_categorical: bool = False) -> float:
    x, y = np.asarray(x), np.asarray(y)
    if x.shape != y.shape:
        raise ValueError("x and y must have equal length")
    joint = _joint_counts(discretize(x, bins, x_categorical), discretize(y, bins, y_categorical))
    return _mi_from_joint(joint)


def normalized_mi(x, y, bins: int = DEFAULT_BINS,
                  x_categorical: bool = False, y_categorical: bool = False) -> float:
    """``2 I(X;Y) / (H(X) + H(Y))``; 0 when both entropies vanish."""
    hx = entropy(x, bins, x_categorical)
    hy = entropy(y, bins, y_categorical)
    if hx + hy <= 0:
        return 0.0
    mi = mutual_information(x, y, bins, x_categorical, y_categorical)
    return float(min(max(2.0 * mi / (hx + hy), 0.0), 1.0))


def information_gain(target, given, bins: int = DEFAULT_BINS,
                     target_categorical: bool = False, given_categorical: bool = False) -> float:
    """Entropy of ``target`` minus its average entropy inside the bins of ``given``."""
    target, given = np.asarray(target), np.asarray(given)
    if target.shape != given.shape:
        raise ValueError("target and given must have equal length")
    joint = _joint_counts(discretize(target, bins, target_categorical),
                          discretize(given, bins, given_categorical))
    return _ig_from_joint(joint)


def pcc(x, y) -> float:
    """Pearson correlation; 0 if either column has zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("x and y must have equal length")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx <= 0 or syy <= 0:
        return 0.0
    return float(np.clip((dx @ dy) / np.sqrt(sxx * syy), -1.0, 1.0))


def std_dev(column) -> float:
    """Population standard deviation (divides by N)."""
    x = np.asarray(column, dtype=np.float64)
    return float(np.sqrt(np.mean((x - x.mean()) ** 2)))


@dataclass(frozen=True)
class MeasureCache:
    """Per-feature statistics and pairwise matrices used by the objectives.

    ``ig[i, j]`` is the information gain of feature ``i`` given feature ``j``.
    ``feat_dist`` is the Euclidean distance between min-max scaled columns.
    """

    entropy: np.ndarray
    std_dev: np.ndarray
    nmi: np.ndarray
    ig: np.ndarray
    pcc: np.ndarray
    feat_dist: np.ndarray
    bin_count: int
    feature_names: tuple[str, ...] = ()

    @property
    def n_features(self) -> int:
        return len(self.entropy)

    @property
    def constant_features(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.std_dev == 0)]

    def save(self, path: str | Path) -> None:
        """Write an ``.npz`` archive; entries carry a fixed timestamp so equal caches give equal bytes."""
        arrays = {"entropy": self.entropy, "std_dev": self.std_dev, "nmi": self.nmi, "ig": self.ig,
                  "pcc": self.pcc, "feat_dist": self.feat_dist,
                  "bin_count": np.asarray(self.bin_count),
                  "feature_names": np.array(self.feature_names, dtype=str)}
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
            for name, arr in arrays.items():
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
                zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)),
                            buf.getvalue())

    @classmethod
    def load(cls, path: str | Path) -> MeasureCache:
        with np.load(path) as z:
            return cls(z["entropy"], z["std_dev"], z["nmi"], z["ig"], z["pcc"], z["feat_dist"],
                       int(z["bin_count"]), tuple(str(s) for s in z["feature_names"]))


def cache_key(ds: NumericDataset, bins: int) -> str:
    h = hashlib.sha256(ds.content_hash().encode())
    h.update(f"bins={bins}".encode())
    return h.hexdigest()[:16]


def _pcc_matrix(values: np.ndarray) -> np.ndarray:
    centered = values - values.mean(axis=0)
    ss = np.einsum("ij,ij->j", centered, centered)
    live = ss > 0
    cov = centered.T @ centered
    denom = np.sqrt(np.outer(ss, ss))
    out = np.zeros_like(cov)
    both = np.outer(live, live)
    out[both] = cov[both] / denom[both]
    out = np.clip((out + out.T) / 2.0, -1.0, 1.0)
    out[np.diag_indices_from(out)] = live.astype(np.float64)
    return out


def build_cache(ds: NumericDataset, norm: NormalizedView | None = None,
                bins: int = DEFAULT_BINS) -> MeasureCache:
    """Compute every measure the objective models need, once per dataset.

    Entropy, NMI and IG use the binned columns, PCC and SD the raw values,
    and the feature distances the min-max scaled values.
    """
    m = ds.n_features
    if m < 2:
        raise ValueError("need at least two features")
    if norm is None:
        norm = normalize_minmax(ds)
    kinds = [f.kind for f in ds.schema.features]
    codes = [discretize(ds.values[:, i], bins, kinds[i] == CATEGORICAL) for i in range(m)]
    ent = np.array([_entropy_of_counts(np.bincount(c)) for c in codes])
    sd = np.array([std_dev(ds.values[:, i]) for i in range(m)])

    nmi = np.zeros((m, m))
    ig = np.zeros((m, m))
    for i in range(m):
        nmi[i, i] = 1.0 if ent[i] > 0 else 0.0
        ig[i, i] = ent[i]
        for j in range(i + 1, m):
            joint = _joint_counts(codes[i], codes[j])
            denom = ent[i] + ent[j]
            v = min(max(2.0 * _mi_from_joint(joint) / denom, 0.0), 1.0) if denom > 0 else 0.0
            nmi[i, j] = nmi[j, i] = v
            ig[i, j] = _ig_from_joint(joint)
            ig[j, i] = _ig_from_joint(joint.T)

    dist = squareform(pdist(np.ascontiguousarray(norm.values.T), metric="euclidean"))
    cache = MeasureCache(ent, sd, nmi, ig, _pcc_matrix(ds.values), dist, bins,
                         tuple(ds.feature_names))
    if cache.constant_features:
        logger.info("constant features: %s", cache.constant_features)
    return cache


def load_or_build_cache(ds: NumericDataset, bins: int, directory: str | Path | None = None
                        ) -> MeasureCache:
    """Reuse a cache file keyed by dataset content and bin count if present."""
    if directory is None:
        return build_cache(ds, bins=bins)
    path = Path(directory) / f"measures_{cache_key(ds, bins)}.npz"
    if path.exists():
        return MeasureCache.load(path)
    cache = build_cache(ds, bins=bins)
    cache.save(path)
    return cache
