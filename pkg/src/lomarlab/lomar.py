"""LoMar: a two-phase defense scoring updates by local density ratios.

Phase I gives every client a malicious factor. Each update's k nearest peers
(squared Euclidean distance on the full delta) form its reference
neighborhood; within that neighborhood a kernel density estimate is taken
separately on every output label's parameter slice, and the per-label factor
is the mean neighbor density over the client's own density. The overall factor
is the product across labels. Colluding poisoners sit in a tight cluster, so
their own density is inflated and their factor falls below the clean range;
an isolated clean client stays near 1.

Phase II thresholds: keep client i iff F(i) >= epsilon (default 1). A
theoretical false-alarm bound for the threshold is exposed as a diagnostic;
it never drives filtering.

All density work happens in the log domain. The default kernel's exponent is
linear in the distance, exp(-d/(2h)) with the Gaussian normalizer 1/(sqrt(2*pi)*h);
kernel="gaussian" switches to the conventional exp(-d^2/(2h^2)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .models import ClientUpdate

KERNELS = ("exp", "gaussian")
NEIGHBOR_DENSITY_MODES = ("own_neighborhood", "center_reference")

DEFAULT_K_FRACTION = 0.4


@dataclass(frozen=True)
class KdeConfig:
    """Knobs for the factor pipeline.

    k=None picks floor(0.4 * population); bandwidth=None uses the per-call
    median heuristic (median pairwise slice distance over all labels, divided
    by sqrt(2), falling back to 1.0 when the median is zero).
    neighbor_density_mode chooses whose reference set scores a neighbor:
    its own k-NN set (default) or the center's.
    """

    k: int | None = None
    bandwidth: float | None = None
    kernel: str = "exp"
    neighbor_density_mode: str = "own_neighborhood"
    epsilon: float = 1.0
    density_floor: float = 1e-300

    def __post_init__(self):
        if self.k is not None and self.k < 1:
            raise ValueError("k must be >= 1")
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ValueError("bandwidth must be > 0")
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.neighbor_density_mode not in NEIGHBOR_DENSITY_MODES:
            raise ValueError(f"unknown neighbor_density_mode {self.neighbor_density_mode!r}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.density_floor <= 0:
            raise ValueError("density_floor must be > 0")


@dataclass(frozen=True)
class NeighborSet:
    """A client's reference set: the k nearest peers with squared distances."""

    center: int
    members: tuple[tuple[int, float], ...]

    def ids(self) -> tuple[int, ...]:
        return tuple(m for m, _ in self.members)


@dataclass(frozen=True)
class FactorReport:
    """Phase I + II outcome for one client."""

    client_id: int
    per_label_log_factors: tuple[float, ...]
    log_factor: float
    factor: float
    delta: int


@dataclass
class LomarResult:
    """Full pipeline output: reports plus the resolved knobs and diagnostics."""

    reports: list[FactorReport]
    k_used: int
    h_used: float
    epsilon_used: float
    floor_hits: int
    neighbor_sets: list[NeighborSet]

    def kept_ids(self) -> list[int]:
        return sorted(r.client_id for r in self.reports if r.delta == 1)

    def factors_by_id(self) -> dict[int, float]:
        return {r.client_id: r.factor for r in self.reports}


def default_k(population: int) -> int:
    """k = floor(0.4 * population), clamped into [1, population - 1]."""
    if population < 2:
        raise ValueError("need at least 2 updates")
    return min(max(int(math.floor(DEFAULT_K_FRACTION * population)), 1), population - 1)


def _update_matrix(updates: list[ClientUpdate]) -> np.ndarray:
    if len(updates) < 2:
        raise ValueError("need at least 2 updates")
    layout = updates[0].delta.layout
    for u in updates[1:]:
        if u.delta.layout != layout:
            raise ValueError("updates have mismatched layouts")
    return np.stack([u.delta.values for u in updates])


def _sq_dist_rows(matrix: np.ndarray) -> np.ndarray:
    """Dense squared-distance matrix, computed row by row.

    Rowwise evaluation keeps the result exactly symmetric with an exactly
    zero diagonal (the same elementwise squares reduce in the same order for
    (i, j) and (j, i)).
    """
    n = matrix.shape[0]
    out = np.empty((n, n))
    for i in range(n):
        out[i] = np.sum((matrix - matrix[i]) ** 2, axis=1)
    return out


def pairwise_sq_dist(updates: list[ClientUpdate]) -> np.ndarray:
    """Squared Euclidean distances between full update vectors."""
    return _sq_dist_rows(_update_matrix(updates))


def knn(dist_matrix: np.ndarray, center: int, k: int, ids: list[int] | None = None) -> NeighborSet:
    """The k nearest peers of `center`, ties broken by lower id.

    Positions index dist_matrix rows; `ids` relabels members (defaults to
    positions). The center itself is excluded.
    """
    n = dist_matrix.shape[0]
    if not 1 <= k <= n - 1:
        raise ValueError(f"k={k} must be in [1, {n - 1}]")
    if ids is None:
        ids = list(range(n))
    peers = [(dist_matrix[center, j], ids[j], j) for j in range(n) if j != center]
    peers.sort(key=lambda t: (t[0], t[1]))
    return NeighborSet(center=ids[center], members=tuple((pos, d) for d, _, pos in peers[:k]))


def _log_kernel(dist: np.ndarray, h: float, kernel: str) -> np.ndarray:
    """Log of the smoothing kernel at Euclidean distance(s) `dist`."""
    norm = -math.log(math.sqrt(2.0 * math.pi) * h)
    if kernel == "exp":
        return norm - dist / (2.0 * h)
    return norm - (dist * dist) / (2.0 * h * h)


def _logsumexp(values: np.ndarray) -> float:
    m = np.max(values)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(values - m))))


def kde_density(center_slice: np.ndarray, neighbor_slices: np.ndarray, h: float,
                kernel: str = "exp") -> float:
    """Mean kernel value of the center against its neighbors' slices."""
    if h <= 0:
        raise ValueError("bandwidth must be > 0")
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}")
    neighbors = np.atleast_2d(np.asarray(neighbor_slices, dtype=np.float64))
    if neighbors.shape[0] == 0:
        raise ValueError("need at least one neighbor")
    center = np.asarray(center_slice, dtype=np.float64)
    d = np.sqrt(np.sum((neighbors - center) ** 2, axis=1))
    return float(np.exp(_logsumexp(_log_kernel(d, h, kernel))) / neighbors.shape[0])


def label_log_factor(neighbor_log_densities: np.ndarray, center_log_density: float) -> float:
    """log of (mean neighbor density / center density), centered for exactness.

    Centering on the denominator makes the all-equal case return exactly 0,
    so those clients sit exactly at factor 1.
    """
    terms = np.asarray(neighbor_log_densities, dtype=np.float64) - center_log_density
    return _logsumexp(terms) - math.log(len(terms))


def label_factor(neighbor_densities: np.ndarray, center_density: float) -> float:
    """Per-label malicious factor from linear densities."""
    nd = np.asarray(neighbor_densities, dtype=np.float64)
    if center_density <= 0 or np.any(nd <= 0):
        raise ValueError("densities must be > 0")
    return math.exp(label_log_factor(np.log(nd), math.log(center_density)))


def combine_factors(per_label_factors) -> float:
    """Product of per-label factors, accumulated in the log domain."""
    factors = np.asarray(per_label_factors, dtype=np.float64)
    if factors.size == 0:
        return 1.0
    if np.any(factors <= 0):
        raise ValueError("factors must be > 0")
    return float(np.exp(np.sum(np.log(factors))))


def median_bandwidth(slice_dists: list[np.ndarray]) -> float:
    """Median heuristic: pooled median pairwise slice distance / sqrt(2)."""
    pooled = []
    for d in slice_dists:
        n = d.shape[0]
        iu = np.triu_indices(n, k=1)
        pooled.append(d[iu])
    med = float(np.median(np.concatenate(pooled)))
    return med / math.sqrt(2.0) if med > 0 else 1.0


def decide(report: FactorReport, epsilon: float) -> int:
    """Phase II rule: keep (1) iff the factor reaches the threshold."""
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    return int(report.factor >= epsilon)


def lomar_run(updates: list[ClientUpdate], cfg: KdeConfig = KdeConfig()) -> LomarResult:
    """Score every update and threshold. Requires at least k+1 updates."""
    matrix = _update_matrix(updates)
    n = matrix.shape[0]
    ids = [u.client_id for u in updates]
    if len(set(ids)) != n:
        raise ValueError("duplicate client ids")
    k = cfg.k if cfg.k is not None else default_k(n)
    if not 1 <= k <= n - 1:
        raise ValueError(f"k={k} needs a population of at least k+1 (got {n})")

    full_dist = _sq_dist_rows(matrix)
    neighbor_sets = [knn(full_dist, i, k, ids) for i in range(n)]
    neighbor_pos = [np.fromiter((p for p, _ in ns.members), dtype=np.int64, count=k) for ns in neighbor_sets]

    layout = updates[0].delta.layout
    num_labels = layout.num_labels
    slice_dists = []
    for r in range(num_labels):
        sl = matrix[:, layout.label_slice(r)]
        slice_dists.append(np.sqrt(_sq_dist_rows(sl)))

    h = cfg.bandwidth if cfg.bandwidth is not None else median_bandwidth(slice_dists)
    log_floor = math.log(cfg.density_floor)
    floor_hits = 0

    log_density = np.empty((n, num_labels))
    log_kernels = [_log_kernel(d, h, cfg.kernel) for d in slice_dists]
    for r in range(num_labels):
        lk = log_kernels[r]
        for i in range(n):
            log_density[i, r] = _logsumexp(lk[i, neighbor_pos[i]]) - math.log(k)
    floor_hits += int(np.sum(log_density < log_floor))
    log_density = np.maximum(log_density, log_floor)

    per_label = np.empty((n, num_labels))
    for i in range(n):
        nbrs = neighbor_pos[i]
        for r in range(num_labels):
            if cfg.neighbor_density_mode == "own_neighborhood":
                nld = log_density[nbrs, r]
            else:
                # Score every neighbor against the center's reference set.
                lk = log_kernels[r]
                nld = np.array([_logsumexp(lk[j, nbrs]) - math.log(k) for j in nbrs])
                below = int(np.sum(nld < log_floor))
                floor_hits += below
                nld = np.maximum(nld, log_floor)
            per_label[i, r] = label_log_factor(nld, log_density[i, r])

    reports = []
    for i in range(n):
        log_f = float(np.sum(per_label[i]))
        factor = float(np.exp(log_f))
        reports.append(FactorReport(
            client_id=ids[i],
            per_label_log_factors=tuple(float(v) for v in per_label[i]),
            log_factor=log_f,
            factor=factor,
            delta=int(factor >= cfg.epsilon),
        ))
    return LomarResult(
        reports=reports,
        k_used=k,
        h_used=float(h),
        epsilon_used=cfg.epsilon,
        floor_hits=floor_hits,
        neighbor_sets=neighbor_sets,
    )


def lomar_filter(updates: list[ClientUpdate], cfg: KdeConfig = KdeConfig()) -> list[FactorReport]:
    """Phase I + II reports only (see lomar_run for diagnostics)."""
    return lomar_run(updates, cfg).reports


def ball_volume(radius: float, dim: int) -> float:
    """Volume of the Euclidean ball, used to turn a neighbor distance into V."""
    if radius <= 0 or dim < 1:
        raise ValueError("need radius > 0 and dim >= 1")
    log_v = (dim / 2.0) * math.log(math.pi) + dim * math.log(radius) - math.lgamma(dim / 2.0 + 1.0)
    try:
        return math.exp(log_v)
    except OverflowError:
        return math.inf


def false_alarm_bound(eps_m: float, k: int, volume: float, h_bar: float) -> float:
    """Diagnostic upper bound on the clean false-alarm probability at eps_m.

    Equals 1 at eps_m = 1 and decreases strictly as the threshold moves away.
    Never used for filtering: the phase II rule keeps high factors while this
    bound treats them as the alarm event, and that tension is deliberately
    left visible.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if volume <= 0 or h_bar <= 0:
        raise ValueError("need volume > 0 and h_bar > 0")
    num = 4.0 * math.pi * (eps_m - 1.0) ** 2 * (k + 1) ** 2 * h_bar
    den = k * (2.0 * k + eps_m + 1.0) ** 2 * volume ** 2
    with np.errstate(over="ignore"):
        exponent = num / den
    if math.isinf(exponent):
        return np.finfo(np.float64).tiny
    return max(math.exp(-exponent), np.finfo(np.float64).tiny)
