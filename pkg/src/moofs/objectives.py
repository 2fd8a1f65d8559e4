"""Objective vectors for a feature mask.

A chromosome is a boolean vector over the features; ``True`` marks a selected
feature.  Every model scores a mask with three maximized quantities:

* ``f_sel``: reciprocal of the mean pairwise similarity among selected features,
* ``f_unsel``: mean similarity between each unselected feature and its
  nearest (by feature distance) selected feature,
* ``f_disp``: mean standard deviation or mean entropy of the selected features.

Only a :class:`~moofs.measures.MeasureCache` is consulted, never class labels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .measures import MeasureCache

EPS = 1e-12

NMI, IG, PCC = "nmi", "ig", "pcc"
SD, ENTROPY = "sd", "entropy"

# token -> (similarity, dispersion, uses sd exclusions)
MODEL_TOKENS: dict[str, tuple[str, str, bool]] = {
    "model1a": (NMI, SD, False),
    "model1b": (NMI, SD, True),
    "model2": (NMI, ENTROPY, False),
    "model3a": (IG, SD, False),
    "model3b": (IG, SD, True),
    "model4": (IG, ENTROPY, False),
    "model5a": (PCC, SD, False),
    "model5b": (PCC, SD, True),
    "model6": (PCC, ENTROPY, False),
}


@dataclass(frozen=True)
class ObjectiveModel:
    similarity: str
    dispersion: str
    sd_exclusions: frozenset[int] = frozenset()
    token: str = ""

    def __post_init__(self):
        if self.similarity not in (NMI, IG, PCC):
            raise ValueError(f"unknown similarity {self.similarity!r}")
        if self.dispersion not in (SD, ENTROPY):
            raise ValueError(f"unknown dispersion {self.dispersion!r}")
        if self.sd_exclusions and self.dispersion != SD:
            raise ValueError("sd_exclusions only apply to the standard-deviation models")
        object.__setattr__(self, "sd_exclusions", frozenset(int(i) for i in self.sd_exclusions))


def get_model(token: str, exclusions: Sequence[int] = ()) -> ObjectiveModel:
    """Build the model for a CLI token; ``exclusions`` is used by the (b) variants only."""
    try:
        similarity, dispersion, excludes = MODEL_TOKENS[token]
    except KeyError:
        raise ValueError(f"unknown model {token!r}; choose from {', '.join(MODEL_TOKENS)}") from None
    if excludes and not exclusions:
        raise ValueError(f"{token} needs the features whose deviation is ignored")
    return ObjectiveModel(similarity, dispersion,
                          frozenset(exclusions) if excludes else frozenset(), token)


class ObjectiveVector(NamedTuple):
    f_sel: float
    f_unsel: float
    f_disp: float


def decode(bits) -> tuple[np.ndarray, np.ndarray]:
    """Return (selected, unselected) index arrays of a mask."""
    bits = np.asarray(bits, dtype=bool)
    return np.flatnonzero(bits), np.flatnonzero(~bits)


def from_string(text: str) -> np.ndarray:
    return np.array([c == "1" for c in text.strip()], dtype=bool)


def to_string(bits) -> str:
    return "".join("1" if b else "0" for b in np.asarray(bits, dtype=bool))


def repair(bits, rng: np.random.Generator) -> np.ndarray:
    """Force at least two selected and one unselected feature."""
    bits = np.array(bits, dtype=bool)
    n_sel = int(bits.sum())
    if n_sel < 2:
        zeros = np.flatnonzero(~bits)
        bits[rng.choice(zeros, size=2 - n_sel, replace=False)] = True
    elif n_sel == len(bits):
        bits[rng.integers(len(bits))] = False
    return bits


def similarity_matrix(model: ObjectiveModel, cache: MeasureCache) -> np.ndarray:
    if model.similarity == NMI:
        return cache.nmi
    if model.similarity == IG:
        return (cache.ig + cache.ig.T) / 2.0
    return np.abs(cache.pcc)


def f_selected_dissimilarity(sf, model: ObjectiveModel, cache: MeasureCache,
                             sim: np.ndarray | None = None) -> float:
    sf = np.sort(np.asarray(sf, dtype=np.int64))  # fixed summation order
    k = len(sf)
    if k < 2:
        raise ValueError("need at least two selected features")
    if sim is None:
        sim = similarity_matrix(model, cache)
    block = sim[np.ix_(sf, sf)]
    avg = block[np.triu_indices(k, 1)].sum() * 2.0 / (k * (k - 1))
    return 1.0 / max(float(avg), EPS)


def nearest_selected(nsf, sf, cache: MeasureCache) -> np.ndarray:
    """For each unselected feature, the closest selected one (ties go to the lower index)."""
    sf = np.sort(np.asarray(sf, dtype=np.int64))
    d = cache.feat_dist[np.ix_(np.asarray(nsf, dtype=np.int64), sf)]
    return sf[np.argmin(d, axis=1)]


def f_unselected_coverage(sf, nsf, model: ObjectiveModel, cache: MeasureCache,
                          sim: np.ndarray | None = None) -> float:
    nsf = np.asarray(nsf, dtype=np.int64)
    if len(sf) < 1 or len(nsf) < 1:
        raise ValueError("need selected and unselected features")
    if sim is None:
        sim = similarity_matrix(model, cache)
    partner = nearest_selected(nsf, sf, cache)
    return float(sim[nsf, partner].sum() / len(nsf))


def f_dispersion(sf, model: ObjectiveModel, cache: MeasureCache) -> float:
    sf = np.asarray(sf, dtype=np.int64)
    if len(sf) < 1:
        raise ValueError("need at least one selected feature")
    if model.dispersion == ENTROPY:
        return float(cache.entropy[sf].mean())
    kept = [i for i in sf.tolist() if i not in model.sd_exclusions]
    if not kept:
        return 0.0
    return float(cache.std_dev[kept].mean())


class Evaluator:
    """Memoizing objective evaluation for one (model, cache) pair."""

    def __init__(self, model: ObjectiveModel, cache: MeasureCache):
        self.model = model
        self.cache = cache
        self.sim = similarity_matrix(model, cache)
        self._memo: dict[bytes, ObjectiveVector] = {}

    def __call__(self, bits) -> ObjectiveVector:
        bits = np.asarray(bits, dtype=bool)
        key = np.packbits(bits).tobytes()
        hit = self._memo.get(key)
        if hit is None:
            sf, nsf = decode(bits)
            hit = ObjectiveVector(
                f_selected_dissimilarity(sf, self.model, self.cache, self.sim),
                f_unselected_coverage(sf, nsf, self.model, self.cache, self.sim),
                f_dispersion(sf, self.model, self.cache),
            )
            self._memo[key] = hit
        return hit


def evaluate(bits, model: ObjectiveModel, cache: MeasureCache) -> ObjectiveVector:
    sf, nsf = decode(bits)
    return ObjectiveVector(
        f_selected_dissimilarity(sf, model, cache),
        f_unselected_coverage(sf, nsf, model, cache),
        f_dispersion(sf, model, cache),
    )
