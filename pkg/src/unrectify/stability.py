"""Stability certification from per-level weight-norm sums.

For a valid graph with uniform nonlinearity gain bound d, the certified
Lipschitz value of the level-n stacked function follows the recursion

    C(0) = 1,   C(n) = d * sum over level-n nodes a, incoming arcs b->a of
                        ||W_ab||_2 * C(level(b)),

where identity, duplication, and bare-activation arcs contribute a unit
factor and bias terms drop out of differences.  If every level from some m
onward satisfies d * sum ||W_ab||_2 <= 1, the running maximum of C stops
growing and the network is certified stable.  The recursion sums channel
contributions at concatenations; a root-sum-square combination would be
tighter, but the summed form is the one the certificate is proven for, so
the certifier keeps it.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .elements import BasisElement, linear_part
from .graph import Arc, Dag, forward_batch, levels, uniform_bound_of
from .parallel import parallel_map, worker_count

__all__ = [
    "LevelSum",
    "StabilityReport",
    "GainCurve",
    "SoundnessReport",
    "spectral_norm",
    "svd_spectral_norm",
    "level_sums",
    "certify",
    "rescale_to_stability",
    "empirical_gain",
    "soundness_check",
    "resnet_link_condition",
    "SUM_TOLERANCE",
]

SUM_TOLERANCE = 1e-12


def svd_spectral_norm(w) -> float:
    """Dense SVD largest singular value; the reference oracle."""
    arr = np.asarray(w, dtype=float)
    if arr.size == 0:
        return 0.0
    return float(np.linalg.svd(arr, compute_uv=False)[0])


def _power_run(gram: np.ndarray, v0: np.ndarray, rtol: float, max_iter: int):
    """Power iteration with a remainder-projected stopping test.

    The Rayleigh sequence converges geometrically; the projected remaining
    error diff * r / (1 - r), with r estimated from successive differences,
    decides convergence rather than the raw difference, which goes small
    long before the estimate settles when the spectral gap is tight.
    """
    v = v0 / np.linalg.norm(v0)
    prev = None
    prev_diff = None
    for _ in range(max_iter):
        w = gram @ v
        new = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, v, True
        v = w / norm
        if prev is not None:
            diff = abs(new - prev)
            scale = max(abs(new), 1e-300)
            if diff <= 1e-15 * scale:
                return new, v, True
            if prev_diff is not None and prev_diff > 0.0:
                ratio = diff / prev_diff
                if ratio < 1.0 and diff * ratio / (1.0 - ratio) <= rtol * scale:
                    return new, v, True
            prev_diff = diff
        prev = new
    return (prev if prev is not None else 0.0), v, False


def _boosted_rayleigh(gram: np.ndarray, v0: np.ndarray) -> float:
    """Stagnation fallback: iterate on a repeatedly squared Gram matrix.

    Squaring drives the eigenvalue ratios toward zero, so a short run
    recovers the leading eigenvector even with a tight gap; the Rayleigh
    quotient is then taken on the original matrix (second-order accurate in
    the vector error).
    """
    b = gram / max(float(np.linalg.norm(gram, "fro")), 1e-300)
    for _ in range(12):
        b = b @ b
        f = float(np.linalg.norm(b, "fro"))
        if not np.isfinite(f) or f == 0.0:
            break
        b = b / f
    v = v0 / np.linalg.norm(v0)
    for _ in range(128):
        w = b @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            break
        v = w / norm
    return float(v @ gram @ v)


def spectral_norm(w, rtol: float = 1e-10, max_iter: int = 1000) -> float:
    """Largest singular value by power iteration on the smaller Gram matrix.

    Deterministic all-ones start plus a second deterministic start (guarding
    against orthogonality to the leading direction); runs that stagnate
    restart on a squared Gram matrix.  The Rayleigh quotient only
    underestimates, so the best run wins.
    """
    arr = np.asarray(w, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"spectral norm needs a matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix entries must be finite")
    if arr.size == 0:
        return 0.0
    gram = arr @ arr.T if arr.shape[0] <= arr.shape[1] else arr.T @ arr
    n = gram.shape[0]
    if n == 1:
        return float(np.sqrt(max(gram[0, 0], 0.0)))

    starts = [np.ones(n), np.linspace(1.0, 2.0, n)]
    best = 0.0
    stagnated = False
    for v0 in starts:
        value, _, ok = _power_run(gram, v0, rtol, max_iter)
        best = max(best, value)
        stagnated = stagnated or not ok
    if stagnated:
        for v0 in starts:
            best = max(best, _boosted_rayleigh(gram, v0))
    return float(np.sqrt(max(best, 0.0)))


def _arc_coefficients(arc: Arc, norm: str) -> float:
    """Weight-norm contribution of one arc; unit for weightless arcs."""
    w = linear_part(arc.elem)
    if w is None:
        return 1.0
    if norm == "spectral":
        return spectral_norm(w)
    return float(np.linalg.norm(w, "fro"))


@dataclass(frozen=True)
class LevelSum:
    level: int
    sum: float
    frob_sum: float


@dataclass(frozen=True)
class StabilityReport:
    d: float
    level_sums: tuple[LevelSum, ...]
    stable_from: Optional[int]
    certified_C: tuple[float, ...]

    @property
    def certified(self) -> bool:
        return self.stable_from is not None

    @property
    def verdict(self) -> str:
        return "certified stable" if self.certified else "not certified"


@dataclass(frozen=True)
class GainCurve:
    levels: tuple[int, ...]
    gains: tuple[float, ...]
    pairs_used: int
    pairs_subsampled: bool


@dataclass(frozen=True)
class SoundnessReport:
    ok: bool
    violations: tuple[tuple[int, float, float], ...]  # (level, gain, bound)
    gain_curve: GainCurve
    stability: StabilityReport


def _arcs_by_level(dag: Dag) -> tuple[dict[int, int], dict[int, list[Arc]]]:
    lvl = levels(dag)
    per_level: dict[int, list[Arc]] = {}
    for arc in dag.arcs:
        per_level.setdefault(lvl[arc.dst], []).append(arc)
    return lvl, per_level


def level_sums(dag: Dag, d: Optional[float] = None) -> list[LevelSum]:
    """d-scaled sums of arc weight norms per destination level, 1..L.

    Only the linear part of each arc enters; biases cancel in differences.
    Identity, duplication, and bare activation or transform arcs count 1.
    """
    dag.require_valid()
    if d is None:
        d = uniform_bound_of(dag)
    lvl, per_level = _arcs_by_level(dag)
    top = max(lvl.values())
    out = []
    for n in range(1, top + 1):
        arcs = per_level.get(n, [])
        spec_total = d * sum(_arc_coefficients(a, "spectral") for a in arcs)
        frob_total = d * sum(_arc_coefficients(a, "frobenius") for a in arcs)
        out.append(LevelSum(level=n, sum=spec_total, frob_sum=frob_total))
    return out


def certify(dag: Dag, d: Optional[float] = None) -> StabilityReport:
    """Certify stability: level sums, the first all-suffix-stable level, and
    the certified Lipschitz recursion values."""
    dag.require_valid()
    if d is None:
        d = uniform_bound_of(dag)
    sums = level_sums(dag, d=d)
    stable_from: Optional[int] = None
    for entry in reversed(sums):
        if entry.sum <= 1.0 + SUM_TOLERANCE:
            stable_from = entry.level
        else:
            break

    lvl, per_level = _arcs_by_level(dag)
    top = max(lvl.values())
    c = [1.0] + [0.0] * top
    for n in range(1, top + 1):
        total = 0.0
        for arc in per_level.get(n, []):
            total += _arc_coefficients(arc, "spectral") * c[lvl[arc.src]]
        c[n] = d * total
    return StabilityReport(
        d=float(d),
        level_sums=tuple(sums),
        stable_from=stable_from,
        certified_C=tuple(c),
    )


def _scaled_element(elem: BasisElement, factor: float) -> BasisElement:
    w = linear_part(elem)
    if w is None:
        return elem
    return replace(elem, weight=np.asarray(w) * factor)


def rescale_to_stability(dag: Dag, use_frobenius: bool = False) -> Dag:
    """Scale weight matrices so every level's norm sum is at most one.

    Levels already within budget are untouched.  On a violating level the
    weighted arcs are scaled by the factor that lands the recomputed sum
    exactly at one; weightless arcs (unit contributions) cannot be scaled,
    so the weighted mass absorbs their share.  A level whose unit
    contributions alone exceed the budget cannot be repaired and raises.
    Only linear parts change; biases are preserved.
    """
    dag.require_valid()
    d = uniform_bound_of(dag)
    norm = "frobenius" if use_frobenius else "spectral"
    lvl, per_level = _arcs_by_level(dag)
    top = max(lvl.values())

    factors: dict[int, float] = {}
    for n in range(1, top + 1):
        arcs = per_level.get(n, [])
        unit_mass = d * sum(1.0 for a in arcs if linear_part(a.elem) is None)
        weighted = d * sum(
            _arc_coefficients(a, norm) for a in arcs if linear_part(a.elem) is not None
        )
        total = unit_mass + weighted
        if total <= 1.0 + SUM_TOLERANCE:
            continue
        if unit_mass > 1.0 + SUM_TOLERANCE or weighted == 0.0:
            raise ValueError(
                f"level {n}: unit arc contributions ({unit_mass:g}) already exceed "
                "the budget; rescaling weights cannot certify this level"
            )
        for arc in arcs:
            if linear_part(arc.elem) is not None:
                factors[arc.id] = (1.0 - unit_mass) / weighted

    if not factors:
        return dag
    new_arcs = tuple(
        Arc(
            a.id,
            a.src,
            a.dst,
            _scaled_element(a.elem, factors[a.id]) if a.id in factors else a.elem,
            a.in_dim,
            a.out_dim,
        )
        for a in dag.arcs
    )
    out = Dag(dag.input_dim, dag.nodes, new_arcs, dag.output_node, dict(dag.labels))
    out.require_valid()
    return out


def _level_value_matrices(dag: Dag, xs: np.ndarray) -> list[np.ndarray]:
    """Stacked node values per level, level 0 first (the input itself)."""
    _, trace = forward_batch(dag, xs)
    lvl = levels(dag)
    top = max(lvl.values())
    per_level: dict[int, list[int]] = {}
    for nid, n in lvl.items():
        per_level.setdefault(n, []).append(nid)
    out = []
    for n in range(top + 1):
        nodes = sorted(per_level[n])
        out.append(np.concatenate([trace[nid] for nid in nodes], axis=1))
    return out


def empirical_gain(
    dag: Dag,
    samples,
    pair_budget: int = 2_000_000,
    seed: int = 0,
    min_distance: float = 1e-9,
) -> GainCurve:
    """Per-level maximum gain ||N_n(x) - N_n(y)|| / ||x - y|| over pairs.

    All pairs when the budget allows, otherwise a seeded uniform sample of
    ``pair_budget`` pairs.  Pairs closer than ``min_distance`` are skipped.
    Level n stacks the values of every level-n node; level 0 is the input,
    so its gain is exactly one.
    """
    xs = np.asarray(samples, dtype=float)
    if xs.ndim != 2 or len(xs) < 2:
        raise ValueError("empirical gain needs at least two samples")
    if len(np.unique(xs, axis=0)) < 2:
        raise ValueError("empirical gain needs at least two distinct samples")
    values = _level_value_matrices(dag, xs)
    top = len(values) - 1
    n = len(xs)
    gains = np.zeros(top + 1)
    gains[0] = 1.0

    total_pairs = n * (n - 1) // 2
    subsampled = total_pairs > pair_budget
    used = 0
    if not subsampled:
        def sweep(rows):
            # local maxima per level; merged below with an order-free max
            local = np.zeros(top + 1)
            count = 0
            for i in rows:
                dx = xs[i + 1 :] - xs[i]
                nx = np.linalg.norm(dx, axis=1)
                keep = nx >= min_distance
                if not keep.any():
                    continue
                count += int(keep.sum())
                for lev in range(1, top + 1):
                    dv = values[lev][i + 1 :] - values[lev][i]
                    ratio = np.linalg.norm(dv[keep], axis=1) / nx[keep]
                    local[lev] = max(local[lev], float(ratio.max()))
            return local, count

        chunk = max(16, (n - 1) // (4 * worker_count()) + 1)
        row_chunks = [range(i, min(i + chunk, n - 1)) for i in range(0, n - 1, chunk)]
        for local, count in parallel_map(sweep, row_chunks):
            used += count
            np.maximum(gains, local, out=gains)
        gains[0] = 1.0
    else:
        rng = np.random.default_rng(seed)
        remaining = int(pair_budget)
        chunk = 1 << 17
        while remaining > 0:
            take = min(chunk, remaining)
            i = rng.integers(0, n, size=take)
            j = rng.integers(0, n, size=take)
            dx = xs[i] - xs[j]
            nx = np.linalg.norm(dx, axis=1)
            keep = nx >= min_distance
            used += int(keep.sum())
            if keep.any():
                for lev in range(1, top + 1):
                    dv = values[lev][i[keep]] - values[lev][j[keep]]
                    ratio = np.linalg.norm(dv, axis=1) / nx[keep]
                    m = float(ratio.max())
                    if m > gains[lev]:
                        gains[lev] = m
            remaining -= take
    if used == 0:
        raise ValueError("all sample pairs are closer than the minimum distance")
    return GainCurve(
        levels=tuple(range(top + 1)),
        gains=tuple(float(g) for g in gains),
        pairs_used=used,
        pairs_subsampled=subsampled,
    )


def soundness_check(
    dag: Dag,
    samples,
    report: Optional[StabilityReport] = None,
    pair_budget: int = 2_000_000,
    seed: int = 0,
    tolerance: float = 1e-6,
) -> SoundnessReport:
    """Assert measured gains never beat the certified bound.

    The bound at level n is the running maximum of the certified recursion
    up to n; a violation signals an implementation bug, since the bound is
    proven for every input pair.
    """
    if report is None:
        report = certify(dag)
    curve = empirical_gain(dag, samples, pair_budget=pair_budget, seed=seed)
    violations = []
    running = 0.0
    for lev in curve.levels:
        running = max(running, report.certified_C[lev])
        gain = curve.gains[lev]
        if gain > running + tolerance:
            violations.append((lev, float(gain), float(running)))
    return SoundnessReport(
        ok=not violations,
        violations=tuple(violations),
        gain_curve=curve,
        stability=report,
    )


def resnet_link_condition(w1, w2) -> tuple[bool, float]:
    """Alternative two-layer residual stability check.

    Evaluates ||I - W2 W1||_2 <= 1; informational only, applicable to the
    specific direct-link block shape rather than general graphs.
    """
    w1 = np.asarray(w1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    value = spectral_norm(np.eye(w2.shape[0]) - w2 @ w1)
    return bool(value <= 1.0), float(value)
