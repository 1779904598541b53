"""Quality indicators: objective scaling, 3-D hypervolume, improvement stats.

Scaling maps raw (lcc, ghg, walkscore) values into [0,1]^3 with 0 at the
most desirable and 1 at the least desirable anchor per objective, flipping
maximised objectives first.  Hypervolume is then the Lebesgue measure of
the region dominated by the front, relative to reference point (1,1,1).

Two hypervolume routines are provided: ``hypervolume`` (a dimension sweep
over sorted third coordinates with 2-D staircase slices) and
``hypervolume_oracle`` (exact inclusion-exclusion over all non-empty point
subsets, usable up to ~20 points).  They agree to 1e-9 and cross-check
each other in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .problem import OBJECTIVE_SENSES

REFERENCE_POINT = (1.0, 1.0, 1.0)

#: hard cap for the inclusion-exclusion oracle (2^n subsets)
ORACLE_MAX_POINTS = 20


@dataclass(frozen=True)
class Anchors:
    """Per-objective (best, worst) raw values used as scaling endpoints."""

    best: tuple[float, float, float]
    worst: tuple[float, float, float]
    senses: tuple[str, ...] = OBJECTIVE_SENSES


def fit_anchors(points: np.ndarray, senses: tuple[str, ...] = OBJECTIVE_SENSES) -> Anchors:
    """Most and least desirable value of each objective column."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != len(senses):
        raise ValueError(f"expected (n,{len(senses)}) array, got {pts.shape}")
    best = []
    worst = []
    for j, sense in enumerate(senses):
        col = pts[:, j]
        if sense == "min":
            best.append(float(col.min()))
            worst.append(float(col.max()))
        else:
            best.append(float(col.max()))
            worst.append(float(col.min()))
    return Anchors(best=tuple(best), worst=tuple(worst), senses=tuple(senses))


@dataclass
class ScaledFront:
    """Objective points mapped so 0 = most desirable, 1 = least desirable.

    ``scaled`` keeps unclamped values (generated points better than the
    training anchors go below 0); ``hv_points()`` yields the clamped copy
    that hypervolume expects.
    """

    scaled: np.ndarray
    anchors: Anchors
    warnings: list[str] = field(default_factory=list)

    def hv_points(self) -> np.ndarray:
        return np.clip(self.scaled, 0.0, 1.0)


def minmax_scale(points: np.ndarray, anchors: Anchors) -> ScaledFront:
    """Affine map sending each objective's best anchor to 0 and worst to 1.

    A degenerate objective (best == worst) maps to all zeros for that
    column and records a warning instead of dividing by zero.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (n,3) array, got {pts.shape}")
    out = np.empty_like(pts)
    warnings: list[str] = []
    for j, sense in enumerate(anchors.senses):
        best, worst = anchors.best[j], anchors.worst[j]
        if best == worst:
            out[:, j] = 0.0
            warnings.append(f"objective {j} degenerate: best == worst == {best}")
            continue
        if sense == "min":
            out[:, j] = (pts[:, j] - best) / (worst - best)
        else:
            out[:, j] = (best - pts[:, j]) / (best - worst)
    return ScaledFront(scaled=out, anchors=anchors, warnings=warnings)


def inverse_scale(front: ScaledFront) -> np.ndarray:
    """Map scaled points back to raw objective values."""
    anchors = front.anchors
    raw = np.empty_like(front.scaled)
    for j, sense in enumerate(anchors.senses):
        best, worst = anchors.best[j], anchors.worst[j]
        if sense == "min":
            raw[:, j] = best + front.scaled[:, j] * (worst - best)
        else:
            raw[:, j] = best - front.scaled[:, j] * (best - worst)
    return raw


def pareto_mask(points: np.ndarray) -> np.ndarray:
    """Boolean mask of non-dominated rows (all objectives minimised)."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    mask = np.ones(n, dtype=bool)
    for i in range(n):
        if not mask[i]:
            continue
        le = (pts <= pts[i]).all(axis=1)
        lt = (pts < pts[i]).any(axis=1)
        dominators = le & lt
        if dominators.any():
            mask[i] = False
    return mask


def _hv2d(points: np.ndarray, rx: float, ry: float) -> float:
    """Area of the union of [x,rx] x [y,ry] boxes (points minimised)."""
    if len(points) == 0:
        return 0.0
    pts = points[np.lexsort((points[:, 1], points[:, 0]))]
    area = 0.0
    best_y = ry
    # staircase sweep: ascending x, keep the lowest y seen so far
    xs: list[float] = []
    ys: list[float] = []
    for x, y in pts:
        if y < best_y:
            xs.append(x)
            ys.append(y)
            best_y = y
    for i, (x, y) in enumerate(zip(xs, ys)):
        next_x = xs[i + 1] if i + 1 < len(xs) else rx
        area += (next_x - x) * (ry - y)
    return area


def hypervolume(points: np.ndarray, reference: tuple[float, float, float] = REFERENCE_POINT) -> float:
    """Dominated volume of a 3-D front relative to ``reference``.

    Points are clipped to [0, reference] first; dominated points contribute
    nothing.  Implemented as a sweep over sorted third coordinates with 2-D
    union-area slices.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return 0.0
    ref = np.asarray(reference, dtype=float)
    pts = np.clip(pts, 0.0, ref)
    keep = (pts < ref).all(axis=1)
    pts = pts[keep]
    if len(pts) == 0:
        return 0.0
    pts = pts[pareto_mask(pts)]

    order = np.argsort(pts[:, 2], kind="stable")
    pts = pts[order]
    zs = pts[:, 2]
    volume = 0.0
    for i in range(len(pts)):
        z = zs[i]
        z_next = zs[i + 1] if i + 1 < len(pts) else ref[2]
        if z_next > z:
            active = pts[: i + 1, :2]
            volume += _hv2d(active, ref[0], ref[1]) * (z_next - z)
    return float(volume)


def _popcount(indices: np.ndarray) -> np.ndarray:
    counts = np.zeros(len(indices), dtype=np.int64)
    v = indices.copy()
    while v.any():
        counts += v & 1
        v >>= 1
    return counts


def hypervolume_oracle(
    points: np.ndarray, reference: tuple[float, float, float] = REFERENCE_POINT
) -> float:
    """Exact union volume by inclusion-exclusion over all non-empty subsets.

    The intersection of a subset's boxes is the box from the componentwise
    max corner to the reference point.  Cost is O(2^n), so inputs are
    capped at ORACLE_MAX_POINTS.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(pts)
    if n == 0:
        return 0.0
    if n > ORACLE_MAX_POINTS:
        raise ValueError(f"oracle limited to {ORACLE_MAX_POINTS} points, got {n}")
    ref = np.asarray(reference, dtype=float)
    pts = np.clip(pts, 0.0, ref)

    # corner[s] = componentwise max over the subset encoded by bitmask s;
    # each subset is built from its highest bit plus the remainder
    size = 1 << n
    corner = np.empty((size, 3), dtype=float)
    corner[0] = -np.inf
    for b in range(n):
        lo, hi = 1 << b, 1 << (b + 1)
        corner[lo:hi] = np.maximum(corner[:lo], pts[b])

    sides = np.clip(ref - corner[1:], 0.0, None)
    vols = sides.prod(axis=1)
    signs = np.where(_popcount(np.arange(1, size)) % 2 == 1, 1.0, -1.0)
    return float(np.dot(signs, vols))


def improvement_pct(train_value: float, gen_value: float, sense: str = "min") -> float:
    """Percent improvement of the generated value over the training value.

    Follows the published convention: the change is divided by the training
    value, or by the generated value when the training value is zero, and
    oriented so a genuine improvement is positive for either optimisation
    sense.  Returns 0.0 when both values are zero.
    """
    if not (np.isfinite(train_value) and np.isfinite(gen_value)):
        raise ValueError("improvement requires finite values")
    delta = gen_value - train_value
    if sense == "min":
        delta = -delta
    denom = train_value if train_value != 0.0 else gen_value
    if denom == 0.0:
        return 0.0
    return delta / abs(denom) * 100.0


@dataclass(frozen=True)
class BestValues:
    min_lcc: float
    min_ghg: float
    max_walkscore: float
    argmin_lcc: int
    argmin_ghg: int
    argmax_walkscore: int


def extract_best(points: np.ndarray) -> BestValues:
    """Per-objective extrema of a feasible objective set, with indices."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("extract_best requires a non-empty set")
    i_lcc = int(np.argmin(pts[:, 0]))
    i_ghg = int(np.argmin(pts[:, 1]))
    i_ws = int(np.argmax(pts[:, 2]))
    return BestValues(
        min_lcc=float(pts[i_lcc, 0]),
        min_ghg=float(pts[i_ghg, 1]),
        max_walkscore=float(pts[i_ws, 2]),
        argmin_lcc=i_lcc,
        argmin_ghg=i_ghg,
        argmax_walkscore=i_ws,
    )
