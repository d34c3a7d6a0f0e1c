"""Scoring pipeline runs against ground truth, plus parameter sweeps.

A track is labeled with a target when at least half of its logged
positions fall within the association distance of that target while it
is alive. Only tracks that reach confirmed status at some point are
eligible; everything else is ignored. Confirmed tracks that match no
target are false tracks, and extra tracks on an already-covered target
are duplicates rather than false.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .errors import InvalidParameterError
from .pipeline import DetectParams, RunResult, TrackRecord, make_plan, run_many
from .scenario import Scenario
from .track import TrackerConfig


@dataclass(frozen=True)
class EvalParams:
    d_assoc: float = 15.0
    label_fraction: float = 0.5
    vel_tol: float = 0.3
    vel_window: int = 10

    def __post_init__(self):
        if self.d_assoc <= 0 or not 0 < self.label_fraction <= 1:
            raise InvalidParameterError("bad association parameters")
        if self.vel_tol <= 0 or self.vel_window < 1:
            raise InvalidParameterError("bad convergence parameters")


@dataclass(frozen=True)
class RunMetrics:
    continuity: tuple[float, ...]
    convergence: tuple[int | None, ...]
    false_tracks: int
    duplicate_tracks: int
    confirmed_tracks: int
    pos_rmse: float
    vel_rmse: float
    mean_measurements: float
    runtime_s: float

    @property
    def mean_continuity(self) -> float:
        return float(np.mean(self.continuity)) if self.continuity else math.nan


def _tracks_by_id(records: Iterable[TrackRecord]) -> dict[int, list[TrackRecord]]:
    out: dict[int, list[TrackRecord]] = {}
    for rec in records:
        out.setdefault(rec.track_id, []).append(rec)
    return out


def label_tracks(result: RunResult, params: EvalParams) -> dict[int, int | None]:
    """Map each ever-confirmed track id to a target index or None.

    The label is the target holding the largest fraction of the track's
    logged positions within d_assoc, provided that fraction reaches
    label_fraction.
    """
    labels: dict[int, int | None] = {}
    n_targets = result.truth_pos.shape[1]
    for tid, recs in _tracks_by_id(result.records).items():
        if not any(r.status == "confirmed" for r in recs):
            continue
        emissions = np.array([r.emission for r in recs])
        points = np.array([[r.x, r.y] for r in recs])
        best, best_frac = None, 0.0
        for k in range(n_targets):
            alive = result.truth_alive[emissions, k]
            dist = np.linalg.norm(points - result.truth_pos[emissions, k], axis=1)
            frac = float(np.mean(alive & (dist <= params.d_assoc)))
            if frac > best_frac:
                best, best_frac = k, frac
        labels[tid] = best if best_frac >= params.label_fraction else None
    return labels


def track_continuity(
    result: RunResult, labels: dict[int, int | None], target: int
) -> float:
    """Fraction of the target's alive emissions covered by some track
    labeled with it. Coverage counts from track creation onward."""
    alive = np.flatnonzero(result.truth_alive[:, target])
    if alive.size == 0:
        return math.nan
    covered: set[int] = set()
    for rec in result.records:
        if labels.get(rec.track_id) == target:
            covered.add(rec.emission)
    return float(np.mean([n in covered for n in alive]))


def convergence_emission(
    result: RunResult, labels: dict[int, int | None], target: int, params: EvalParams
) -> int | None:
    """First emission at which the labeled track's velocity estimate has
    stayed within vel_tol of truth, per component, for vel_window
    consecutive emissions. None if that never happens.

    Where several tracks carry the label at one emission the lowest
    track id wins, keeping the series deterministic.
    """
    series: dict[int, TrackRecord] = {}
    for rec in result.records:
        if labels.get(rec.track_id) != target:
            continue
        cur = series.get(rec.emission)
        if cur is None or rec.track_id < cur.track_id:
            series[rec.emission] = rec
    good: dict[int, bool] = {}
    for n, rec in series.items():
        if not result.truth_alive[n, target]:
            continue
        tv = result.truth_vel[n, target]
        good[n] = abs(rec.vx - tv[0]) <= params.vel_tol and abs(rec.vy - tv[1]) <= params.vel_tol
    streak, prev = 0, None
    for n in sorted(good):
        if good[n]:
            streak = streak + 1 if prev == n - 1 and streak > 0 else 1
        else:
            streak = 0
        prev = n
        if streak >= params.vel_window:
            return n
    return None


def compute_metrics(result: RunResult, params: EvalParams | None = None) -> RunMetrics:
    """Score one run: per-target continuity and convergence, false and
    duplicate confirmed-track counts, pooled position/velocity RMSE."""
    params = params or EvalParams()
    labels = label_tracks(result, params)
    n_targets = result.truth_pos.shape[1]
    continuity = tuple(track_continuity(result, labels, k) for k in range(n_targets))
    convergence = tuple(
        convergence_emission(result, labels, k, params) for k in range(n_targets)
    )
    false_tracks = sum(1 for lab in labels.values() if lab is None)
    per_target = [0] * n_targets
    for lab in labels.values():
        if lab is not None:
            per_target[lab] += 1
    duplicates = sum(max(0, c - 1) for c in per_target)
    sq_pos, sq_vel = [], []
    for rec in result.records:
        k = labels.get(rec.track_id)
        if k is None or not result.truth_alive[rec.emission, k]:
            continue
        tp = result.truth_pos[rec.emission, k]
        tv = result.truth_vel[rec.emission, k]
        sq_pos.append((rec.x - tp[0]) ** 2 + (rec.y - tp[1]) ** 2)
        sq_vel.append((rec.vx - tv[0]) ** 2 + (rec.vy - tv[1]) ** 2)
    return RunMetrics(
        continuity=continuity,
        convergence=convergence,
        false_tracks=false_tracks,
        duplicate_tracks=duplicates,
        confirmed_tracks=len(labels),
        pos_rmse=float(np.sqrt(np.mean(sq_pos))) if sq_pos else math.nan,
        vel_rmse=float(np.sqrt(np.mean(sq_vel))) if sq_vel else math.nan,
        mean_measurements=float(np.mean(result.num_measurements)),
        runtime_s=result.runtime_s,
    )


_SWEEP_PARAMS = ("p_fa", "n_c", "scr_db")


@dataclass(frozen=True)
class SweepSpec:
    param: str
    values: tuple
    seeds: tuple[int, ...]

    def __post_init__(self):
        if self.param not in _SWEEP_PARAMS:
            raise InvalidParameterError(f"unknown sweep parameter {self.param!r}")
        if not self.values or not self.seeds:
            raise InvalidParameterError("sweep needs at least one value and one seed")


@dataclass(frozen=True)
class SweepRow:
    param: str
    value: float
    seed: int
    metrics: RunMetrics


def sweep_configs(
    detect: DetectParams, tracker: TrackerConfig, spec: SweepSpec
) -> list[tuple[DetectParams, TrackerConfig]]:
    """One (detect, tracker) configuration per sweep value."""
    out = []
    for v in spec.values:
        if spec.param == "p_fa":
            out.append((replace(detect, cfar=replace(detect.cfar, p_fa=float(v))), tracker))
        elif spec.param == "n_c":
            out.append((detect, replace(tracker, n_c=int(v))))
        else:
            out.append((detect, tracker))
    return out


def run_sweep(
    scn: Scenario,
    detect: DetectParams,
    tracker: TrackerConfig,
    spec: SweepSpec,
    params: EvalParams | None = None,
    progress=None,
) -> list[SweepRow]:
    """Monte Carlo sweep over one parameter.

    Detection and tracker parameter sweeps share one simulated data
    stream per seed; SCR values each need their own stream because the
    echo amplitudes change. A single-value single-seed sweep therefore
    reproduces a direct run_pipeline call exactly.
    """
    params = params or EvalParams()
    configs = sweep_configs(detect, tracker, spec)
    plan = make_plan(scn) if scn.clutter.kind == "element" else None
    rows: list[SweepRow] = []
    for seed in spec.seeds:
        if spec.param == "scr_db":
            results = [
                run_many(replace(scn, scr_db=float(v)), [configs[i]], seed, plan)[0]
                for i, v in enumerate(spec.values)
            ]
        else:
            results = run_many(scn, configs, seed, plan)
        for v, res in zip(spec.values, results):
            rows.append(SweepRow(spec.param, float(v), seed, compute_metrics(res, params)))
        if progress is not None:
            progress(seed, rows)
    return rows


def aggregate(rows: list[SweepRow]) -> list[dict]:
    """Per-value mean and standard error of the headline metrics,
    ordered by value."""
    by_value: dict[float, list[RunMetrics]] = {}
    for row in rows:
        by_value.setdefault(row.value, []).append(row.metrics)

    def stats(xs: list[float]) -> tuple[float, float]:
        arr = np.asarray(xs, dtype=float)
        arr = arr[~np.isnan(arr)]
        if arr.size == 0:
            return math.nan, math.nan
        se = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else 0.0
        return float(arr.mean()), se

    out = []
    for value in sorted(by_value):
        ms = by_value[value]
        cont = stats([m.mean_continuity for m in ms])
        false = stats([float(m.false_tracks) for m in ms])
        dup = stats([float(m.duplicate_tracks) for m in ms])
        pos = stats([m.pos_rmse for m in ms])
        vel = stats([m.vel_rmse for m in ms])
        out.append(
            {
                "value": value,
                "runs": len(ms),
                "continuity_mean": cont[0],
                "continuity_se": cont[1],
                "false_mean": false[0],
                "false_se": false[1],
                "duplicate_mean": dup[0],
                "duplicate_se": dup[1],
                "pos_rmse_mean": pos[0],
                "pos_rmse_se": pos[1],
                "vel_rmse_mean": vel[0],
                "vel_rmse_se": vel[1],
            }
        )
    return out
