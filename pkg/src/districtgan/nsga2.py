"""NSGA-II over the district design problem, archiving every evaluation.

The engine keeps the classic structure: uniform seeding over the field
ranges, binary tournament selection on (rank, crowding), simulated-binary
crossover and bounded polynomial mutation on the real relaxation of each
integer field, and elitist (mu + lambda) environmental selection through
non-dominated sorting.

Infeasible offspring are never discarded: they are ranked after all
feasible fronts (tied by constraint-violation count) and recorded in the
archive alongside everything else.  The archive is append-only and holds
one entry per evaluation, so its CSV form is the GAN training set.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import problem
from .problem import FIELD_BOUNDS, FIELD_NAMES, ObjectiveTriple


@dataclass
class GaConfig:
    population_size: int = 128
    generations: int = 512
    mutation_prob: float = 0.05
    crossover_prob: float = 0.75
    eta: float = 2.5
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        for name in ("mutation_prob", "crossover_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0,1]")
        if self.eta <= 0:
            raise ValueError("eta must be positive")


@dataclass
class Solution:
    decision: tuple[int, ...]
    objectives: ObjectiveTriple | None = None
    generation: int = 0
    rank: int | None = None
    crowding: float | None = None
    violations: int = 0

    @property
    def feasible(self) -> bool:
        return self.objectives is not None


class SolutionArchive:
    """Append-only record of every evaluated solution, in evaluation order."""

    def __init__(self, solutions: Iterable[Solution] = ()) -> None:
        self.solutions: list[Solution] = list(solutions)

    def __len__(self) -> int:
        return len(self.solutions)

    def __iter__(self):
        return iter(self.solutions)

    def extend(self, solutions: Iterable[Solution]) -> None:
        self.solutions.extend(solutions)

    def feasible(self) -> list[Solution]:
        return [s for s in self.solutions if s.feasible]

    def decisions(self) -> list[tuple[int, ...]]:
        return [s.decision for s in self.solutions]


def minimized_objectives(solutions: Sequence[Solution]) -> np.ndarray:
    """(n,3) objective matrix with every column oriented for minimisation."""
    rows = np.array(
        [[s.objectives.lcc, s.objectives.ghg, -s.objectives.walkscore] for s in solutions],
        dtype=float,
    ).reshape(len(solutions), 3)
    return rows


def non_dominated_sort(population: Sequence[Solution]) -> list[list[Solution]]:
    """Partition a population into dominance fronts, setting ``rank``.

    Feasible members are sorted by Pareto dominance over the three directed
    objectives; infeasible members trail in extra fronts ordered by
    constraint-violation count.
    """
    feasible = [s for s in population if s.feasible]
    infeasible = [s for s in population if not s.feasible]
    fronts: list[list[Solution]] = []

    if feasible:
        objs = minimized_objectives(feasible)
        n = len(feasible)
        le = (objs[:, None, :] <= objs[None, :, :]).all(axis=2)
        lt = (objs[:, None, :] < objs[None, :, :]).any(axis=2)
        dominates = le & lt  # dominates[i, j]: i dominates j
        n_dominators = dominates.sum(axis=0)
        current = np.flatnonzero(n_dominators == 0)
        remaining = n_dominators.copy()
        assigned = 0
        while len(current):
            fronts.append([feasible[i] for i in current])
            assigned += len(current)
            remaining[current] = -1
            released = dominates[current].sum(axis=0)
            remaining = remaining - released
            current = np.flatnonzero(remaining == 0)
        assert assigned == n

    if infeasible:
        by_violations: dict[int, list[Solution]] = {}
        for s in infeasible:
            by_violations.setdefault(s.violations, []).append(s)
        for count in sorted(by_violations):
            fronts.append(by_violations[count])

    for rank, front in enumerate(fronts):
        for s in front:
            s.rank = rank
    return fronts


def crowding_distance(front: Sequence[Solution]) -> list[float]:
    """Crowding distance of each front member, also stored on ``crowding``.

    Boundary members per objective get +inf; interior members accumulate
    the normalised neighbour gap over the three objectives.  Objectives
    with zero spread contribute nothing.
    """
    if not front:
        raise ValueError("crowding_distance requires a non-empty front")
    n = len(front)
    if any(not s.feasible for s in front):
        for s in front:
            s.crowding = 0.0
        return [0.0] * n
    dist = np.zeros(n)
    objs = minimized_objectives(front)
    for j in range(objs.shape[1]):
        order = np.argsort(objs[:, j], kind="stable")
        col = objs[order, j]
        dist[order[0]] = np.inf
        dist[order[-1]] = np.inf
        spread = col[-1] - col[0]
        if spread <= 0:
            continue
        for k in range(1, n - 1):
            if np.isfinite(dist[order[k]]):
                dist[order[k]] += (col[k + 1] - col[k - 1]) / spread
    for s, d in zip(front, dist):
        s.crowding = float(d)
    return [float(d) for d in dist]


def _round_clip(x: float, lo: int, hi: int) -> int:
    v = int(np.floor(x + 0.5))
    return min(max(v, lo), hi)


def _sbx_values(y1: float, y2: float, lo: float, hi: float, eta: float, u: float) -> tuple[float, float]:
    """Deb's bounded SBX for one variable; y1 <= y2 assumed."""
    spread = y2 - y1
    exp = 1.0 / (eta + 1.0)

    beta = 1.0 + 2.0 * (y1 - lo) / spread
    alpha = 2.0 - beta ** -(eta + 1.0)
    if u <= 1.0 / alpha:
        betaq = (u * alpha) ** exp
    else:
        betaq = (1.0 / (2.0 - u * alpha)) ** exp
    c1 = 0.5 * ((y1 + y2) - betaq * spread)

    beta = 1.0 + 2.0 * (hi - y2) / spread
    alpha = 2.0 - beta ** -(eta + 1.0)
    if u <= 1.0 / alpha:
        betaq = (u * alpha) ** exp
    else:
        betaq = (1.0 / (2.0 - u * alpha)) ** exp
    c2 = 0.5 * ((y1 + y2) + betaq * spread)

    return min(max(c1, lo), hi), min(max(c2, lo), hi)


def sbx_crossover(
    a: Sequence[int],
    b: Sequence[int],
    eta: float,
    rng: np.random.Generator,
    bounds: Sequence[tuple[int, int]] = FIELD_BOUNDS,
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Simulated-binary crossover on the real relaxation of each field.

    One spread draw per field; results are rounded to integers and kept
    inside the field bounds.  Identical parents are a fixed point.
    """
    child1: list[int] = []
    child2: list[int] = []
    for xa, xb, (lo, hi) in zip(a, b, bounds):
        u = rng.random()
        if xa == xb:
            child1.append(int(xa))
            child2.append(int(xb))
            continue
        y1, y2 = (xa, xb) if xa <= xb else (xb, xa)
        c1, c2 = _sbx_values(float(y1), float(y2), float(lo), float(hi), eta, u)
        if xa > xb:
            c1, c2 = c2, c1
        child1.append(_round_clip(c1, lo, hi))
        child2.append(_round_clip(c2, lo, hi))
    return tuple(child1), tuple(child2)


def polynomial_mutation(
    d: Sequence[int],
    eta: float,
    mutation_prob: float,
    rng: np.random.Generator,
    bounds: Sequence[tuple[int, int]] = FIELD_BOUNDS,
) -> tuple[int, ...]:
    """Bounded polynomial mutation on the real relaxation of each field."""
    out: list[int] = []
    exp = 1.0 / (eta + 1.0)
    for x, (lo, hi) in zip(d, bounds):
        if rng.random() >= mutation_prob:
            out.append(int(x))
            continue
        u = rng.random()
        span = float(hi - lo)
        if u < 0.5:
            frac = 1.0 - (float(x) - lo) / span
            val = 2.0 * u + (1.0 - 2.0 * u) * frac ** (eta + 1.0)
            delta = val**exp - 1.0
        else:
            frac = 1.0 - (hi - float(x)) / span
            val = 2.0 * (1.0 - u) + (2.0 * u - 1.0) * frac ** (eta + 1.0)
            delta = 1.0 - val**exp
        out.append(_round_clip(float(x) + delta * span, lo, hi))
    return tuple(out)


def _make_solution(
    vec: tuple[int, ...],
    evaluate: Callable[[Sequence[int]], ObjectiveTriple | None],
    generation: int,
) -> Solution:
    verdict = problem.validate(vec)
    objectives = evaluate(vec) if verdict.feasible else None
    return Solution(
        decision=vec,
        objectives=objectives,
        generation=generation,
        violations=len(verdict.violations),
    )


def _tournament(pop: Sequence[Solution], rng: np.random.Generator) -> Solution:
    i, j = rng.integers(0, len(pop), size=2)
    a, b = pop[i], pop[j]
    if a.rank != b.rank:
        return a if a.rank < b.rank else b
    if a.crowding != b.crowding:
        return a if a.crowding > b.crowding else b
    return a if rng.integers(2) == 0 else b


def _environmental_selection(candidates: list[Solution], mu: int) -> list[Solution]:
    fronts = non_dominated_sort(candidates)
    selected: list[Solution] = []
    for front in fronts:
        crowding_distance(front)
        if len(selected) + len(front) <= mu:
            selected.extend(front)
        else:
            need = mu - len(selected)
            order = sorted(range(len(front)), key=lambda k: -front[k].crowding)
            selected.extend(front[k] for k in order[:need])
            break
    return selected


def random_decision(rng: np.random.Generator, bounds: Sequence[tuple[int, int]] = FIELD_BOUNDS) -> tuple[int, ...]:
    return tuple(int(rng.integers(lo, hi + 1)) for lo, hi in bounds)


def run_nsga2(
    cfg: GaConfig,
    evaluate: Callable[[Sequence[int]], ObjectiveTriple | None] = problem.evaluate,
    bounds: Sequence[tuple[int, int]] = FIELD_BOUNDS,
) -> SolutionArchive:
    """Run the GA and return the archive of every evaluated individual.

    Fully deterministic for a fixed ``cfg.rng_seed``.  The archive holds
    population_size * (generations + 1) entries: the evaluated initial
    population plus one batch of offspring per generation.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    mu = cfg.population_size
    archive = SolutionArchive()

    population = [_make_solution(random_decision(rng, bounds), evaluate, 0) for _ in range(mu)]
    archive.extend(population)
    population = _environmental_selection(list(population), mu)

    for gen in range(1, cfg.generations + 1):
        offspring: list[Solution] = []
        while len(offspring) < mu:
            p1 = _tournament(population, rng)
            p2 = _tournament(population, rng)
            if rng.random() < cfg.crossover_prob:
                c1, c2 = sbx_crossover(p1.decision, p2.decision, cfg.eta, rng, bounds)
            else:
                c1, c2 = p1.decision, p2.decision
            for child in (c1, c2):
                if len(offspring) >= mu:
                    break
                mutated = polynomial_mutation(child, cfg.eta, cfg.mutation_prob, rng, bounds)
                offspring.append(_make_solution(mutated, evaluate, gen))
        archive.extend(offspring)
        population = _environmental_selection(population + offspring, mu)

    return archive


ARCHIVE_COLUMNS: tuple[str, ...] = FIELD_NAMES + ("lcc", "ghg", "walkscore", "feasible", "generation")


def write_archive_csv(archive: SolutionArchive, path) -> None:
    """Persist the archive with the schema the GAN training set expects."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ARCHIVE_COLUMNS)
        for s in archive:
            row = [str(v) for v in s.decision]
            if s.feasible:
                row += [repr(s.objectives.lcc), repr(s.objectives.ghg), repr(s.objectives.walkscore), "1"]
            else:
                row += ["", "", "", "0"]
            row.append(str(s.generation))
            writer.writerow(row)


def read_archive_csv(path) -> SolutionArchive:
    archive = SolutionArchive()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != ARCHIVE_COLUMNS:
            raise ValueError(f"unexpected archive header: {header}")
        for row in reader:
            decision = tuple(int(v) for v in row[:10])
            feasible = row[13] == "1"
            objectives = (
                ObjectiveTriple(float(row[10]), float(row[11]), float(row[12])) if feasible else None
            )
            violations = 0 if feasible else len(problem.validate(decision).violations)
            archive.solutions.append(
                Solution(
                    decision=decision,
                    objectives=objectives,
                    generation=int(row[14]),
                    violations=violations,
                )
            )
    return archive
