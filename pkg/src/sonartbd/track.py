"""Multitarget tracking on merged polar measurements.

Each track runs a linear Kalman filter with a nearly-constant-velocity
model over the state [x, y, vx, vy]. Polar measurements are converted
to Cartesian with the multiplicative debiasing factor and the matching
converted-measurement covariance, so the filter itself stays linear.
Track-to-measurement association is global nearest neighbor: a coarse
polar gate, a Mahalanobis gate on the innovation, then a minimum-cost
one-to-one assignment solved by a forward auction with epsilon scaling.
Tracks confirm after enough assigned blobs and are deleted after too
many recent misses.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .detect import PolarMeasurement
from .errors import InvalidParameterError, NumericalDegeneracyError
from .scenario import angle_diff

H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])

TENTATIVE = "tentative"
CONFIRMED = "confirmed"


@dataclass(frozen=True)
class MeasurementNoise:
    """Polar measurement noise: range std in meters, azimuth std in radians."""

    sigma_r: float
    sigma_theta: float

    def __post_init__(self):
        if self.sigma_r <= 0.0 or self.sigma_theta <= 0.0:
            raise InvalidParameterError("measurement noise stds must be positive")


@dataclass(frozen=True)
class ConvertedMeasurement:
    """Debiased Cartesian position z (2,) with covariance R (2, 2)."""

    z: np.ndarray
    R: np.ndarray


@dataclass(frozen=True)
class TrackerConfig:
    """Association and lifecycle parameters. Angles are radians."""

    noise: MeasurementNoise
    sigma_zeta: float = 1e-4
    g_r: float = 10.0
    g_theta: float = np.deg2rad(10.0)
    g_s: float = 0.1
    n_c: int = 5
    d1: int = 7
    d2: int = 15
    v_max: float = 5.0

    def __post_init__(self):
        if self.sigma_zeta < 0.0:
            raise InvalidParameterError("process noise must be nonnegative")
        if self.g_r <= 0.0 or self.g_theta <= 0.0 or self.g_s <= 0.0:
            raise InvalidParameterError("gate sizes must be positive")
        if self.n_c < 1:
            raise InvalidParameterError("confirmation count must be >= 1")
        if not 1 <= self.d1 <= self.d2:
            raise InvalidParameterError("need 1 <= d1 <= d2")
        if self.v_max <= 0.0:
            raise InvalidParameterError("v_max must be positive")


def debias_factor(sigma_theta: float) -> float:
    """Multiplicative range correction: 1 - exp(-s^2) + exp(-s^2 / 2).

    Tends to 1 as the azimuth noise vanishes and removes the inward
    bias of the naive polar-to-Cartesian conversion to second order.
    """
    s2 = sigma_theta * sigma_theta
    return 1.0 - np.exp(-s2) + np.exp(-0.5 * s2)


def convert_measurement(meas: PolarMeasurement, noise: MeasurementNoise) -> ConvertedMeasurement:
    """Debiased Cartesian conversion with its consistent covariance.

    The covariance is the classical debiased converted-measurement form
    evaluated at the measured range and azimuth; it degenerates to the
    rotated diag(sigma_r^2, (r sigma_theta)^2) for small azimuth noise.
    """
    r = meas.r
    th = meas.theta
    s2 = noise.sigma_theta**2
    sr2 = noise.sigma_r**2
    lam = debias_factor(noise.sigma_theta)
    cos_t, sin_t = np.cos(th), np.sin(th)
    z = lam * r * np.array([cos_t, sin_t])

    e2 = np.exp(-2.0 * s2)
    ch1, ch2 = np.cosh(s2), np.cosh(2.0 * s2)
    sh1, sh2 = np.sinh(s2), np.sinh(2.0 * s2)
    c2, s2q = cos_t * cos_t, sin_t * sin_t
    r2 = r * r
    r11 = r2 * e2 * (c2 * (ch2 - ch1) + s2q * (sh2 - sh1)) + sr2 * e2 * (
        c2 * (2.0 * ch2 - ch1) + s2q * (2.0 * sh2 - sh1)
    )
    r22 = r2 * e2 * (s2q * (ch2 - ch1) + c2 * (sh2 - sh1)) + sr2 * e2 * (
        s2q * (2.0 * ch2 - ch1) + c2 * (2.0 * sh2 - sh1)
    )
    r12 = sin_t * cos_t * np.exp(-4.0 * s2) * (sr2 + (r2 + sr2) * (1.0 - np.exp(s2)))
    R = np.array([[r11, r12], [r12, r22]])
    return ConvertedMeasurement(z=z, R=R)


def transition_matrices(dt: float) -> tuple[np.ndarray, np.ndarray]:
    """State transition A and process-noise input G for a step of dt seconds."""
    if dt <= 0.0:
        raise InvalidParameterError("time step must be positive")
    a = np.eye(4)
    a[0, 2] = dt
    a[1, 3] = dt
    half = 0.5 * dt * dt
    g = np.array([[half, 0.0], [0.0, half], [dt, 0.0], [0.0, dt]])
    return a, g


def _require_spd(p: np.ndarray, context: str) -> None:
    try:
        np.linalg.cholesky(p)
    except np.linalg.LinAlgError as exc:
        raise NumericalDegeneracyError(f"{context}: covariance not positive definite") from exc


def predict(x: np.ndarray, p: np.ndarray, dt: float, sigma_zeta: float) -> tuple[np.ndarray, np.ndarray]:
    """Constant-velocity prediction with white-acceleration process noise."""
    _require_spd(p, "predict")
    a, g = transition_matrices(dt)
    q = (sigma_zeta * sigma_zeta) * (g @ g.T)
    x_new = a @ x
    p_new = a @ p @ a.T + q
    return x_new, 0.5 * (p_new + p_new.T)


def innovation(x: np.ndarray, p: np.ndarray, meas: ConvertedMeasurement):
    """Innovation nu and its covariance W = H P H' + R for one pairing."""
    nu = meas.z - H @ x
    w = p[:2, :2] + meas.R
    return nu, w


def _inv_2x2(w: np.ndarray) -> np.ndarray:
    det = w[0, 0] * w[1, 1] - w[0, 1] * w[1, 0]
    if not np.isfinite(det) or det <= 0.0 or w[0, 0] <= 0.0:
        raise NumericalDegeneracyError("innovation covariance is singular")
    return np.array([[w[1, 1], -w[0, 1]], [-w[1, 0], w[0, 0]]]) / det


def update(x: np.ndarray, p: np.ndarray, meas: ConvertedMeasurement) -> tuple[np.ndarray, np.ndarray]:
    """Kalman measurement update in Joseph form.

    The Joseph form (I - K H) P (I - K H)' + K R K' keeps the posterior
    covariance symmetric positive definite under roundoff.
    """
    nu, w = innovation(x, p, meas)
    k = p[:, :2] @ _inv_2x2(w)
    x_new = x + k @ nu
    ikh = np.eye(4) - k @ H
    p_new = ikh @ p @ ikh.T + k @ meas.R @ k.T
    return x_new, 0.5 * (p_new + p_new.T)


def mahalanobis_sq(x: np.ndarray, p: np.ndarray, meas: ConvertedMeasurement) -> float:
    """Statistical distance e_s = nu' W^-1 nu of a track-measurement pair."""
    nu, w = innovation(x, p, meas)
    return float(nu @ _inv_2x2(w) @ nu)


@dataclass
class Track:
    """One tracked object with its filter state and lifecycle bookkeeping."""

    track_id: int
    x: np.ndarray
    p: np.ndarray
    status: str = TENTATIVE
    hits: int = 1
    created: int = 0
    history: deque = field(default_factory=lambda: deque(maxlen=1))
    last_assigned: int = -1

    @property
    def position(self) -> np.ndarray:
        return self.x[:2]

    @property
    def velocity(self) -> np.ndarray:
        return self.x[2:]


def new_track(
    track_id: int, meas: ConvertedMeasurement, cfg: TrackerConfig, emission: int
) -> Track:
    """Track born from one unassigned measurement: measured position, zero
    velocity and a diffuse velocity prior of std v_max per axis."""
    x = np.array([meas.z[0], meas.z[1], 0.0, 0.0])
    p = np.zeros((4, 4))
    p[:2, :2] = meas.R
    p[2, 2] = cfg.v_max**2
    p[3, 3] = cfg.v_max**2
    history: deque = deque(maxlen=cfg.d2)
    history.append(True)
    return Track(
        track_id=track_id, x=x, p=p, created=emission, history=history, last_assigned=0
    )


def gate(
    tracks: list[Track], converted: list[ConvertedMeasurement], polar: list[PolarMeasurement],
    cfg: TrackerConfig,
) -> dict[tuple[int, int], float]:
    """Two-stage gating of predicted tracks against measurements.

    Stage one compares predicted range and azimuth against the measured
    polar values (|dr| < G_r, wrapped |dtheta| < G_theta); stage two
    keeps pairs whose statistical distance is below G_s. Returns
    {(track_index, measurement_index): e_s}.
    """
    candidates: dict[tuple[int, int], float] = {}
    if not tracks or not polar:
        return candidates
    pred_r = np.array([np.hypot(t.x[0], t.x[1]) for t in tracks])
    pred_az = np.array([np.arctan2(t.x[1], t.x[0]) for t in tracks])
    meas_r = np.array([m.r for m in polar])
    meas_az = np.array([m.theta for m in polar])
    coarse = (np.abs(pred_r[:, None] - meas_r[None, :]) < cfg.g_r) & (
        np.abs(angle_diff(pred_az[:, None], meas_az[None, :])) < cfg.g_theta
    )
    for ti, mi in zip(*np.nonzero(coarse)):
        e_s = mahalanobis_sq(tracks[ti].x, tracks[ti].p, converted[mi])
        if e_s < cfg.g_s:
            candidates[(int(ti), int(mi))] = e_s
    return candidates


def _auction_square(benefit: np.ndarray) -> np.ndarray:
    """Forward auction on a square benefit matrix; returns person -> object.

    Runs epsilon scaling: epsilon starts at half the largest absolute
    benefit, divides by 5 between rounds and finishes at 1e-9 times the
    largest absolute benefit, warm-starting prices between rounds. The
    final assignment is then within n * epsilon_final of the optimum.
    """
    n = benefit.shape[0]
    if n == 1:
        return np.zeros(1, dtype=int)
    scale = float(np.max(np.abs(benefit)))
    if scale == 0.0:
        return np.arange(n)
    eps_final = 1e-9 * scale
    eps = 0.5 * scale
    prices = np.zeros(n)
    while True:
        eps = max(eps, eps_final)
        owner = np.full(n, -1, dtype=int)
        assigned = np.full(n, -1, dtype=int)
        pending = list(range(n))
        while pending:
            i = pending.pop()
            values = benefit[i] - prices
            j = int(np.argmax(values))
            v_best = values[j]
            values[j] = -np.inf
            v_second = float(np.max(values))
            prices[j] += v_best - v_second + eps
            prev = owner[j]
            if prev >= 0:
                assigned[prev] = -1
                pending.append(prev)
            owner[j] = i
            assigned[i] = j
        if eps <= eps_final:
            return assigned
        eps /= 5.0


def solve_assignment(cost: np.ndarray) -> list[tuple[int, int]]:
    """One-to-one assignment minimizing total cost; np.inf forbids a pair.

    Among assignments restricted to finite-cost pairs, the solution
    first maximizes the number of assigned pairs and then minimizes the
    summed cost. Implemented by padding to a square matrix where
    forbidden and dummy pairs cost more than any full set of real pairs,
    then running the auction on the negated costs.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise InvalidParameterError("cost must be a 2-d matrix")
    if np.isnan(cost).any():
        raise InvalidParameterError("cost matrix contains NaN")
    n_t, n_d = cost.shape
    if n_t == 0 or n_d == 0:
        return []
    finite = np.isfinite(cost)
    if not finite.any():
        return []
    n = max(n_t, n_d)
    c_min = float(cost[finite].min())
    c_max = float(cost[finite].max())
    big = n * (c_max - c_min) + 1.0
    padded = np.full((n, n), big)
    padded[:n_t, :n_d] = np.where(finite, cost - c_min, big)
    assigned = _auction_square(-padded)
    pairs = []
    for i in range(n_t):
        j = int(assigned[i])
        if j < n_d and finite[i, j] and padded[i, j] < big:
            pairs.append((i, j))
    return pairs


def _components(pairs) -> list[tuple[list[int], list[int]]]:
    """Connected components of the bipartite gating graph."""
    track_adj: dict[int, set[int]] = {}
    meas_adj: dict[int, set[int]] = {}
    for ti, mi in pairs:
        track_adj.setdefault(ti, set()).add(mi)
        meas_adj.setdefault(mi, set()).add(ti)
    seen_t: set[int] = set()
    comps = []
    for start in sorted(track_adj):
        if start in seen_t:
            continue
        stack_t = [start]
        comp_t: list[int] = []
        comp_m: set[int] = set()
        while stack_t:
            t = stack_t.pop()
            if t in seen_t:
                continue
            seen_t.add(t)
            comp_t.append(t)
            for m in track_adj[t]:
                if m not in comp_m:
                    comp_m.add(m)
                    stack_t.extend(meas_adj[m] - seen_t)
        comps.append((sorted(comp_t), sorted(comp_m)))
    return comps


def assign(candidates: dict[tuple[int, int], float]) -> list[tuple[int, int]]:
    """Global nearest-neighbor assignment over gated pairs.

    The gating graph is split into connected components and each
    component is solved independently by the auction, which is exact
    for the joint problem because costs across components are forbidden.
    """
    pairs: list[tuple[int, int]] = []
    for comp_t, comp_m in _components(candidates.keys()):
        sub = np.full((len(comp_t), len(comp_m)), np.inf)
        for a, ti in enumerate(comp_t):
            for b, mi in enumerate(comp_m):
                e = candidates.get((ti, mi))
                if e is not None:
                    sub[a, b] = e
        for a, b in solve_assignment(sub):
            pairs.append((comp_t[a], comp_m[b]))
    return sorted(pairs)


@dataclass
class StepResult:
    """Outcome of one tracker step."""

    emission: int
    t: float
    assignments: list[tuple[int, int]]
    created: list[int]
    deleted: list[int]


class Tracker:
    """Stateful multitarget tracker fed one emission at a time."""

    def __init__(self, cfg: TrackerConfig):
        self.cfg = cfg
        self.tracks: list[Track] = []
        self.next_id = 0
        self.last_emission: int | None = None
        self.last_t: float | None = None

    def step(self, measurements: list[PolarMeasurement], t: float, emission: int) -> StepResult:
        """Advance the tracker by one emission.

        Predicts all tracks to time t, associates the merged blob
        measurements, updates assigned filters, starts a tentative track
        on every unassigned measurement, then applies confirmation and
        deletion rules. Emission indices must be strictly increasing.
        """
        cfg = self.cfg
        if self.last_emission is not None and emission <= self.last_emission:
            raise InvalidParameterError(
                f"emission {emission} not after previous {self.last_emission}"
            )
        if self.last_t is not None:
            dt = t - self.last_t
            for tr in self.tracks:
                tr.x, tr.p = predict(tr.x, tr.p, dt, cfg.sigma_zeta)

        converted = [convert_measurement(m, cfg.noise) for m in measurements]
        candidates = gate(self.tracks, converted, measurements, cfg)
        assignments = assign(candidates)
        assigned_tracks = {ti for ti, _ in assignments}
        assigned_meas = {mi for _, mi in assignments}

        id_pairs: list[tuple[int, int]] = []
        for ti, mi in assignments:
            tr = self.tracks[ti]
            tr.x, tr.p = update(tr.x, tr.p, converted[mi])
            tr.hits += 1
            tr.last_assigned = mi
            id_pairs.append((tr.track_id, mi))
        for i, tr in enumerate(self.tracks):
            tr.history.append(i in assigned_tracks)
            if i not in assigned_tracks:
                tr.last_assigned = -1

        created = []
        for mi, conv in enumerate(converted):
            if mi in assigned_meas:
                continue
            tr = new_track(self.next_id, conv, cfg, emission)
            tr.last_assigned = mi
            self.next_id += 1
            self.tracks.append(tr)
            created.append(tr.track_id)

        for tr in self.tracks:
            if tr.status == TENTATIVE and tr.hits >= cfg.n_c:
                tr.status = CONFIRMED

        deleted = []
        kept = []
        for tr in self.tracks:
            misses = len(tr.history) - sum(tr.history)
            if misses >= cfg.d1:
                deleted.append(tr.track_id)
            else:
                kept.append(tr)
        self.tracks = kept

        self.last_emission = emission
        self.last_t = t
        return StepResult(
            emission=emission, t=t, assignments=id_pairs, created=created, deleted=deleted
        )
