"""Elitist non-dominated sorting GA over binary feature masks.

All objectives are maximized.  One generation: rank and crowd the parents,
breed as many children by binary tournament, crossover and bit-flip mutation,
then keep the best ``pop_size`` of parents plus children front by front, cutting
the last admitted front by decreasing crowding distance.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .measures import MeasureCache
from .objectives import Evaluator, ObjectiveModel, ObjectiveVector, decode, repair, to_string


@dataclass(frozen=True)
class GaConfig:
    pop_size: int = 100
    max_generations: int = 200
    crossover_rate: float = 0.9
    mutation_rate: float = 0.0244
    seed: int = 0
    tournament_size: int = 2
    crossover_kind: str = "single_point"

    def __post_init__(self):
        if self.pop_size < 4 or self.pop_size % 2:
            raise ValueError("pop_size must be even and at least 4")
        if self.max_generations < 0:
            raise ValueError("max_generations must be non-negative")
        for name in ("crossover_rate", "mutation_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be positive")
        if self.crossover_kind not in ("single_point", "uniform"):
            raise ValueError("crossover_kind must be 'single_point' or 'uniform'")


@dataclass
class ScoredIndividual:
    chromosome: np.ndarray
    objectives: ObjectiveVector
    rank: int = 0
    crowding: float = 0.0
    index: int = 0

    @property
    def selected(self) -> list[int]:
        return decode(self.chromosome)[0].tolist()


@dataclass
class ParetoFront:
    members: list[ScoredIndividual]
    model: str = ""
    config: GaConfig = field(default_factory=GaConfig)
    dataset_hash: str = ""
    feature_names: tuple[str, ...] = ()

    def __len__(self):
        return len(self.members)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "config": asdict(self.config),
            "dataset_hash": self.dataset_hash,
            "feature_names": list(self.feature_names),
            "members": [
                {
                    "bits": to_string(m.chromosome),
                    "selected": m.selected,
                    "n_selected": len(m.selected),
                    "objectives": {"f_sel": m.objectives.f_sel, "f_unsel": m.objectives.f_unsel,
                                   "f_disp": m.objectives.f_disp},
                    "crowding": None if math.isinf(m.crowding) else m.crowding,
                }
                for m in self.members
            ],
        }


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    """True iff ``a`` is nowhere worse than ``b`` and better somewhere (maximization)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return bool(np.all(a >= b) and np.any(a > b))


def domination_matrix(F: np.ndarray) -> np.ndarray:
    """``D[p, q]`` is True when solution p dominates solution q."""
    F = np.asarray(F, dtype=np.float64)
    n = len(F)
    ge = np.ones((n, n), dtype=bool)
    gt = np.zeros((n, n), dtype=bool)
    for k in range(F.shape[1]):
        col = F[:, k]
        ge &= col[:, None] >= col[None, :]
        gt |= col[:, None] > col[None, :]
    return ge & gt


def nondominated_fronts(F: np.ndarray) -> list[list[int]]:
    """Fronts as lists of row indices of ``F``, best front first.

    Each solution carries the number of solutions dominating it; peeling a
    front subtracts its members' domination rows, and the solutions whose
    count drops to zero form the next front.
    """
    F = np.asarray(F, dtype=np.float64)
    if len(F) == 0:
        return []
    D = domination_matrix(F)
    count = D.sum(axis=0)
    done = np.zeros(len(F), dtype=bool)
    front = np.flatnonzero(count == 0)
    fronts = []
    while front.size:
        fronts.append(front.tolist())
        done[front] = True
        count = count - D[front].sum(axis=0)
        front = np.flatnonzero((count == 0) & ~done)
    return fronts


def _objective_array(pop: Sequence[ScoredIndividual]) -> np.ndarray:
    return np.array([tuple(ind.objectives) for ind in pop], dtype=np.float64).reshape(len(pop), -1)


def fast_nondominated_sort(pop: Sequence[ScoredIndividual]) -> list[list[ScoredIndividual]]:
    """Assign ``rank`` (1 = best) to every individual and return the fronts."""
    fronts = nondominated_fronts(_objective_array(pop))
    out = []
    for r, idx in enumerate(fronts, start=1):
        for i in idx:
            pop[i].rank = r
        out.append([pop[i] for i in idx])
    return out


def crowding_distances(F: np.ndarray) -> np.ndarray:
    F = np.asarray(F, dtype=np.float64)
    n, m = F.shape
    dist = np.zeros(n)
    if n <= 2:
        dist[:] = np.inf
        return dist
    for k in range(m):
        order = np.argsort(F[:, k], kind="stable")
        col = F[order, k]
        dist[order[0]] = dist[order[-1]] = np.inf
        span = col[-1] - col[0]
        if span > 0:
            dist[order[1:-1]] += (col[2:] - col[:-2]) / span
    return dist


def crowding_distance(front: list[ScoredIndividual]) -> list[ScoredIndividual]:
    if not front:
        raise ValueError("empty front")
    for ind, d in zip(front, crowding_distances(_objective_array(front))):
        ind.crowding = float(d)
    return front


def crowded_key(ind: ScoredIndividual) -> tuple:
    return (ind.rank, -ind.crowding, ind.index)


def crowded_compare(a: ScoredIndividual, b: ScoredIndividual) -> int:
    """-1 if ``a`` is preferred, 1 if ``b`` is, 0 only for the same individual."""
    ka, kb = crowded_key(a), crowded_key(b)
    return -1 if ka < kb else (1 if kb < ka else 0)


def rank_and_crowd(pop: list[ScoredIndividual]) -> list[list[ScoredIndividual]]:
    fronts = fast_nondominated_sort(pop)
    for f in fronts:
        crowding_distance(f)
    return fronts


def tournament_select(pop: Sequence[ScoredIndividual], rng: np.random.Generator,
                      cfg: GaConfig) -> ScoredIndividual:
    picks = rng.integers(len(pop), size=cfg.tournament_size)
    return min((pop[i] for i in picks), key=crowded_key)


def init_population(n_features: int, cfg: GaConfig, rng: np.random.Generator) -> list[np.ndarray]:
    if n_features < 3:
        raise ValueError("need at least three features")
    return [repair(rng.integers(0, 2, size=n_features).astype(bool), rng)
            for _ in range(cfg.pop_size)]


def single_point(p1, p2, cut: int) -> tuple[np.ndarray, np.ndarray]:
    p1 = np.asarray(p1, dtype=bool)
    p2 = np.asarray(p2, dtype=bool)
    return (np.concatenate([p1[:cut], p2[cut:]]), np.concatenate([p2[:cut], p1[cut:]]))


def crossover(p1, p2, rng: np.random.Generator, cfg: GaConfig) -> tuple[np.ndarray, np.ndarray]:
    p1 = np.asarray(p1, dtype=bool)
    p2 = np.asarray(p2, dtype=bool)
    if p1.shape != p2.shape:
        raise ValueError("parents differ in length")
    if rng.random() < cfg.crossover_rate:
        if cfg.crossover_kind == "uniform":
            swap = rng.random(len(p1)) < 0.5
            c1, c2 = np.where(swap, p2, p1), np.where(swap, p1, p2)
        else:
            c1, c2 = single_point(p1, p2, int(rng.integers(1, len(p1))))
    else:
        c1, c2 = p1.copy(), p2.copy()
    return repair(c1, rng), repair(c2, rng)


def bit_flip(bits, rate: float, rng: np.random.Generator) -> np.ndarray:
    bits = np.asarray(bits, dtype=bool)
    return bits ^ (rng.random(len(bits)) < rate)


def mutate(bits, rng: np.random.Generator, cfg: GaConfig) -> np.ndarray:
    return repair(bit_flip(bits, cfg.mutation_rate, rng), rng)


TRACE_COLUMNS = ["generation", "front1_size"] + [
    f"{stat}_{obj}" for obj in ObjectiveVector._fields for stat in ("min", "mean", "max")]


def _trace_row(generation: int, front: list[ScoredIndividual]) -> list:
    F = _objective_array(front)
    row: list = [generation, len(front)]
    for k in range(F.shape[1]):
        row += [float(F[:, k].min()), float(F[:, k].mean()), float(F[:, k].max())]
    return row


def _dedupe(members: list[ScoredIndividual]) -> list[ScoredIndividual]:
    seen, out = set(), []
    for m in members:
        key = m.chromosome.tobytes()
        if key not in seen:
            seen.add(key)
            out.append(m)
    return out


def evolve(cache: MeasureCache, model: ObjectiveModel, cfg: GaConfig,
           on_generation: Callable[[int, list[ScoredIndividual]], None] | None = None,
           trace: list | None = None, dataset_hash: str = "") -> ParetoFront:
    """Run the GA and return the deduplicated rank-1 front of the last population.

    ``on_generation(t, population)`` sees the ranked population of every
    generation (t = 0 is the initial one); ``trace`` collects one summary row
    per generation, see :data:`TRACE_COLUMNS`.
    """
    rng = np.random.default_rng(cfg.seed)
    score = Evaluator(model, cache)

    def scored(chromosomes):
        return [ScoredIndividual(ch, score(ch), index=i) for i, ch in enumerate(chromosomes)]

    pop = scored(init_population(cache.n_features, cfg, rng))
    fronts = rank_and_crowd(pop)
    if trace is not None:
        trace.append(_trace_row(0, fronts[0]))
    if on_generation:
        on_generation(0, pop)

    for gen in range(1, cfg.max_generations + 1):
        children: list[np.ndarray] = []
        while len(children) < cfg.pop_size:
            a1 = tournament_select(pop, rng, cfg)
            a2 = tournament_select(pop, rng, cfg)
            c1, c2 = crossover(a1.chromosome, a2.chromosome, rng, cfg)
            children += [mutate(c1, rng, cfg), mutate(c2, rng, cfg)]
        combined = pop + scored(children[:cfg.pop_size])
        for i, ind in enumerate(combined):
            ind.index = i
        survivors: list[ScoredIndividual] = []
        for front in rank_and_crowd(combined):
            room = cfg.pop_size - len(survivors)
            if len(front) <= room:
                survivors += front
            else:
                survivors += sorted(front, key=lambda s: (-s.crowding, s.index))[:room]
            if len(survivors) == cfg.pop_size:
                break
        pop = [ScoredIndividual(s.chromosome, s.objectives, index=i)
               for i, s in enumerate(survivors)]
        fronts = rank_and_crowd(pop)
        if trace is not None:
            trace.append(_trace_row(gen, fronts[0]))
        if on_generation:
            on_generation(gen, pop)

    return ParetoFront(_dedupe(fronts[0]), model.token, cfg, dataset_hash, cache.feature_names)


def write_trace(rows: list, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in rows:
            w.writerow([row[0], row[1]] + [repr(v) for v in row[2:]])
