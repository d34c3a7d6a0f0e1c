"""Cell-averaging CFAR detection and blob extraction on angle-distance matrices.

The clutter envelope is modeled per cell as Rayleigh with an unknown
local scale. The scale is estimated by maximum likelihood over a
training ring around the cell under test (a rectangular training block
minus a guard block), which fixes the threshold multiplier for a chosen
per-cell false alarm probability in closed form. Detections are grouped
into 4-connected blobs, summarized as polar point measurements and then
merged when closer than the merge radii in range and azimuth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InvalidParameterError
from .scenario import angle_diff, wrap_angle

_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=int)


@dataclass(frozen=True)
class CfarConfig:
    """CFAR window geometry and operating point.

    guard and train are half-widths per axis (beam axis first); the
    guard block (2g+1) x (2g+1) around the cell under test is excluded
    from the (2w+1) x (2w+1) training block. Both blocks are clipped at
    the matrix borders and the threshold uses the actual remaining cell
    count, so the false alarm rate is calibrated at the edges too.
    """

    p_fa: float = 0.2
    guard: tuple[int, int] = (1, 1)
    train: tuple[int, int] = (4, 4)

    def __post_init__(self):
        if not 0.0 < self.p_fa < 1.0:
            raise InvalidParameterError("P_fa must lie in (0, 1)")
        for g, w in zip(self.guard, self.train):
            if g < 0 or w <= g:
                raise InvalidParameterError("training half-width must exceed guard >= 0")


@dataclass(frozen=True)
class Blob:
    """One 4-connected group of detections; cells are (beam, range) index pairs."""

    cells: np.ndarray  # (N, 2) int

    @property
    def area(self) -> int:
        return self.cells.shape[0]


@dataclass(frozen=True)
class PolarMeasurement:
    """Point measurement in the array frame: two-way range in meters and
    azimuth in radians, normalized to (-pi, pi]. area carries the total
    supporting blob area and count the number of merged blobs."""

    r: float
    theta: float
    area: int = 0
    count: int = 1

    def __post_init__(self):
        if self.r < 0.0:
            raise InvalidParameterError("range must be nonnegative")
        object.__setattr__(self, "theta", float(wrap_angle(self.theta)))


def rayleigh_ml_alpha(values: np.ndarray) -> float:
    """Maximum-likelihood Rayleigh scale sqrt(sum(x^2) / (2 N))."""
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise InvalidParameterError("cannot estimate a scale from zero cells")
    return float(np.sqrt(np.dot(x, x) / (2.0 * x.size)))


def ring_energy(values: np.ndarray, cfg: CfarConfig) -> tuple[np.ndarray, np.ndarray]:
    """Training-ring energy sum(I^2) and ring cell count for every cell.

    Computed with integral images so the cost is independent of the
    window size; blocks are clipped at the borders and the counts
    reflect that. The result depends only on the window geometry, so
    thresholds for several P_fa values can share one call.
    """
    values = np.asarray(values)
    if values.ndim != 2:
        raise InvalidParameterError("expected a 2-d matrix")
    power = np.asarray(values, dtype=np.float64) ** 2
    nu, nv = power.shape
    integral = np.zeros((nu + 1, nv + 1))
    np.cumsum(power, axis=0, out=integral[1:, 1:])
    np.cumsum(integral[1:, 1:], axis=1, out=integral[1:, 1:])

    def block(hw_u: int, hw_v: int) -> tuple[np.ndarray, np.ndarray]:
        u = np.arange(nu)
        v = np.arange(nv)
        u0 = np.maximum(u - hw_u, 0)
        u1 = np.minimum(u + hw_u + 1, nu)
        v0 = np.maximum(v - hw_v, 0)
        v1 = np.minimum(v + hw_v + 1, nv)
        s = (
            integral[np.ix_(u1, v1)]
            - integral[np.ix_(u0, v1)]
            - integral[np.ix_(u1, v0)]
            + integral[np.ix_(u0, v0)]
        )
        count = np.outer(u1 - u0, v1 - v0)
        return s, count

    s_train, n_train = block(*cfg.train)
    s_guard, n_guard = block(*cfg.guard)
    ring_sum = np.maximum(s_train - s_guard, 0.0)
    ring_n = n_train - n_guard
    if np.any(ring_n <= 0):
        raise InvalidParameterError("matrix too small for the CFAR training window")
    return ring_sum, ring_n


def threshold_from_rings(ring_sum: np.ndarray, ring_n: np.ndarray, p_fa: float) -> np.ndarray:
    """Threshold T = sqrt((P_fa^(-1/N) - 1) * sum_ring I^2) from ring stats."""
    if not 0.0 < p_fa < 1.0:
        raise InvalidParameterError("P_fa must lie in (0, 1)")
    mult = np.expm1(-np.log(p_fa) / ring_n)
    return np.sqrt(mult * ring_sum)


def cfar_threshold(values: np.ndarray, cfg: CfarConfig) -> np.ndarray:
    """Per-cell detection threshold T = sqrt((P_fa^(-1/N) - 1) * sum_ring I^2).

    Exceeding T has probability exactly P_fa for Rayleigh clutter with
    any local scale, because the threshold scales with the ring energy.
    """
    ring_sum, ring_n = ring_energy(values, cfg)
    return threshold_from_rings(ring_sum, ring_n, cfg.p_fa)


def cfar_binary_map(values: np.ndarray, cfg: CfarConfig) -> np.ndarray:
    """Boolean detection map: cell value strictly above its threshold."""
    return np.asarray(values) > cfar_threshold(values, cfg)


def label_blobs(binary_map: np.ndarray, min_area: int = 1, max_area: int = 500) -> list[Blob]:
    """4-connected components of the binary map, filtered by area.

    The beam axis does not wrap; components are returned in label order
    (row-major discovery order), which keeps downstream processing
    deterministic.
    """
    b = np.asarray(binary_map, dtype=bool)
    if b.ndim != 2:
        raise InvalidParameterError("expected a 2-d binary map")
    if min_area < 1 or max_area < min_area:
        raise InvalidParameterError("need 1 <= min_area <= max_area")
    labels, count = ndimage.label(b, structure=_FOUR_CONN)
    if count == 0:
        return []
    flat = labels.ravel()
    idx = np.flatnonzero(flat)
    order = np.argsort(flat[idx], kind="stable")
    idx = idx[order]
    cells = np.column_stack(np.unravel_index(idx, b.shape))
    sizes = np.bincount(flat[idx])[1:]
    blobs = []
    start = 0
    for size in sizes:
        if min_area <= size <= max_area:
            blobs.append(Blob(cells=cells[start : start + size]))
        start += size
    return blobs


def blob_measurement(blob: Blob, adm) -> PolarMeasurement:
    """Summarize a blob as a polar point measurement.

    The range column is the amplitude-weighted centroid of the blob's
    range indices; the azimuth is the steering azimuth of the strongest
    blob row at the rounded centroid column. Rows outside the blob are
    not consulted, so a stronger unrelated return at the same range
    cannot steal the estimate.
    """
    u = blob.cells[:, 0]
    v = blob.cells[:, 1]
    w = np.asarray(adm.values[u, v], dtype=float)
    total = float(w.sum())
    if total <= 0.0:
        raise InvalidParameterError("blob has zero total amplitude")
    v_bar = float(np.dot(w, v) / total)
    col = int(np.clip(round(v_bar), 0, adm.num_cells - 1))
    at_col = u[v == col]
    rows = np.unique(at_col if at_col.size else u)
    peak_row = int(rows[np.argmax(adm.values[rows, col])])
    return PolarMeasurement(
        r=float(adm.range_of(v_bar)),
        theta=float(adm.azimuths[peak_row]),
        area=blob.area,
    )


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i: int, j: int) -> None:
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)


def _pair_mask(r_a, th_a, r_b, th_b, psi_r: float, psi_theta: float) -> np.ndarray:
    return (np.abs(r_a[:, None] - r_b[None, :]) < psi_r) & (
        np.abs(angle_diff(th_a[:, None], th_b[None, :])) < psi_theta
    )


def _close_pairs(r: np.ndarray, th: np.ndarray, psi_r: float, psi_theta: float):
    """Index pairs (i < j) with |dr| < psi_r and wrapped |dtheta| < psi_theta.

    Small inputs use one dense pairwise test. Larger ones are bucketed on
    a (range, azimuth) grid of cell size (psi_r, >= psi_theta) so only
    neighboring buckets are compared, which keeps dense CFAR output (tens
    of thousands of blobs at high P_fa) from allocating an n x n matrix.
    """
    n = r.size
    if n <= 1024:
        close = np.triu(_pair_mask(r, th, r, th, psi_r, psi_theta), k=1)
        return zip(*np.nonzero(close))
    if psi_r <= 0.0 or psi_theta <= 0.0:
        return iter(())
    n_th = max(1, int(np.floor(2.0 * np.pi / psi_theta)))
    kr = np.floor(r / psi_r).astype(np.int64)
    kth = np.floor((th + np.pi) / (2.0 * np.pi / n_th)).astype(np.int64) % n_th
    buckets: dict[tuple[int, int], np.ndarray] = {}
    order = np.lexsort((kth, kr))
    key_arr = np.column_stack([kr[order], kth[order]])
    starts = np.flatnonzero(np.any(np.diff(key_arr, axis=0) != 0, axis=1)) + 1
    for chunk in np.split(order, starts):
        buckets[(int(kr[chunk[0]]), int(kth[chunk[0]]))] = chunk
    pairs = []
    # Half neighborhood so each bucket pair is visited once; azimuth wraps.
    offsets = ((0, 0), (1, -1), (1, 0), (1, 1), (0, 1))
    for (br, bt), idx_a in buckets.items():
        for dr, dt in offsets:
            key = (br + dr, (bt + dt) % n_th)
            idx_b = buckets.get(key)
            if idx_b is None:
                continue
            if key == (br, bt):
                mask = np.triu(
                    _pair_mask(r[idx_a], th[idx_a], r[idx_a], th[idx_a], psi_r, psi_theta),
                    k=1,
                )
                ia, ib = np.nonzero(mask)
                pairs.append((idx_a[ia], idx_a[ib]))
            else:
                mask = _pair_mask(r[idx_a], th[idx_a], r[idx_b], th[idx_b], psi_r, psi_theta)
                ia, ib = np.nonzero(mask)
                pairs.append((idx_a[ia], idx_b[ib]))
    if not pairs:
        return iter(())
    left = np.concatenate([p[0] for p in pairs])
    right = np.concatenate([p[1] for p in pairs])
    return zip(left.tolist(), right.tolist())


def merge_blobs(
    measurements: list[PolarMeasurement], psi_r: float, psi_theta: float
) -> list[PolarMeasurement]:
    """Merge measurements closer than psi_r in range and psi_theta in
    wrapped azimuth.

    Groups are the connected components of the pairwise closeness
    relation (transitive closure), each replaced by its unweighted mean
    range and unweighted circular mean azimuth. Output order follows the
    smallest original index in each group.
    """
    if psi_r < 0.0 or psi_theta < 0.0:
        raise InvalidParameterError("merge radii must be nonnegative")
    n = len(measurements)
    if n <= 1:
        return list(measurements)
    r = np.array([m.r for m in measurements])
    th = np.array([m.theta for m in measurements])
    uf = _UnionFind(n)
    for i, j in _close_pairs(r, th, psi_r, psi_theta):
        uf.union(int(i), int(j))
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(uf.find(i), []).append(i)
    merged = []
    for root in sorted(groups):
        members = groups[root]
        mean_r = float(np.mean(r[members]))
        mean_th = float(np.arctan2(np.sin(th[members]).mean(), np.cos(th[members]).mean()))
        merged.append(
            PolarMeasurement(
                r=mean_r,
                theta=mean_th,
                area=int(sum(measurements[i].area for i in members)),
                count=int(sum(measurements[i].count for i in members)),
            )
        )
    return merged


def extract_measurements(
    adm,
    cfar: CfarConfig,
    min_area: int = 1,
    max_area: int = 500,
    psi_r: float = 10.0,
    psi_theta: float = np.deg2rad(6.0),
) -> tuple[list[Blob], list[PolarMeasurement]]:
    """Full detection stage for one matrix: CFAR, blobs, merged measurements."""
    binary = cfar_binary_map(adm.values, cfar)
    blobs = label_blobs(binary, min_area=min_area, max_area=max_area)
    merged = merge_blobs([blob_measurement(b, adm) for b in blobs], psi_r, psi_theta)
    return blobs, merged
