"""Command line front end.

Subcommands: simulate (write per-emission matrices), track (detect and
track, from a live simulation or saved matrices), ingest (raw PCM to
matrices), sweep (Monte Carlo parameter sweep) and bench (detection
stage timing). Every run writes a manifest with the config hash, seed
and tool version so it can be reproduced exactly.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 validation
or numerical error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .beamform import AngleDistanceMatrix, BeamformPlan, load_matrix, save_matrix
from .config import SWEEP_NAMES, RunConfig, load_run_config
from .detect import CfarConfig, ring_energy, threshold_from_rings
from .errors import (
    ConfigError,
    FileFormatError,
    InvalidParameterError,
    NumericalDegeneracyError,
)
from .evaluate import SweepSpec, aggregate, compute_metrics, run_sweep
from .pipeline import (
    RunResult,
    TrackingLog,
    calibrate_amplitudes,
    emission_matrices,
    make_plan,
    run_tracking,
    truth_log,
)
from .scenario import Scenario, chirp_waveform, rayleigh_matrix

log = logging.getLogger("sonartbd")

_TRACK_HEADER = "emission,t,track_id,status,x,y,vx,vy,p_trace,assigned_blob"
_MEAS_HEADER = "emission,r_m,theta_deg,area"
_BLOB_HEADER = "emission,n,u,v"
_SWEEP_HEADER = "param,value,seed,continuity,false_tracks,pos_rmse,vel_rmse,conv_emission,runtime_s"


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _atomic_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _write_csv(path: Path, header: str, rows) -> None:
    lines = [header]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    _atomic_bytes(path, ("\n".join(lines) + "\n").encode())


def _write_json(path: Path, obj) -> None:
    _atomic_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def _config_sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, cfg_path: Path | None, seed, extra: dict) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config": str(cfg_path) if cfg_path else None,
        "config_sha256": _config_sha256(cfg_path) if cfg_path else None,
        "out": str(out),
        "seed": seed,
        "params": extra,
    }
    _write_json(out / "manifest.json", manifest)


def _matrix_path(out: Path, n: int) -> Path:
    return out / f"emission_{n:05d}.adm"


def _save_matrix_atomic(path: Path, adm) -> None:
    tmp = path.with_name(path.name + ".tmp")
    save_matrix(tmp, adm)
    os.replace(tmp, path)


def _load_config(ns) -> RunConfig:
    cfg = load_run_config(ns.config)
    if getattr(ns, "seed", None) is not None:
        cfg = replace(cfg, scenario=replace(cfg.scenario, seed=ns.seed))
    return cfg


def _prepared_scenario(scn: Scenario):
    """Calibrated scenario plus a reusable beamforming plan."""
    needs_plan = scn.clutter.kind == "element" or bool(scn.targets)
    plan = make_plan(scn) if needs_plan else None
    if scn.targets and scn.scr_db is not None:
        scn = calibrate_amplitudes(scn, None, plan)
    return scn, plan


def cmd_simulate(ns) -> int:
    cfg = _load_config(ns)
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    scn, plan = _prepared_scenario(cfg.scenario)
    count = 0
    for n, _, adm in emission_matrices(scn, None, plan):
        _save_matrix_atomic(_matrix_path(out, n), adm)
        count += 1
    _write_manifest(out, "simulate", Path(ns.config), scn.seed, {"emissions": count})
    print(f"wrote {count} matrices to {out}")
    return 0


def _matrices_from_dir(directory: Path, scn: Scenario):
    files = sorted(directory.glob("emission_*.adm"))
    for path in files:
        n = int(path.stem.rsplit("_", 1)[1])
        adm = load_matrix(path, c=scn.c, t=scn.emission_time(n))
        if adm.num_beams != scn.num_beams or adm.f_s != scn.f_s:
            raise InvalidParameterError(
                f"{path}: matrix geometry ({adm.num_beams} beams at {adm.f_s} Hz) "
                f"does not match the config ({scn.num_beams} beams at {scn.f_s} Hz)"
            )
        yield n, adm.t, adm


def _write_tracking_logs(out: Path, tlog: TrackingLog) -> None:
    track_rows = [
        (r.emission, r.t, r.track_id, r.status, r.x, r.y, r.vx, r.vy, r.p_trace, r.assigned_blob)
        for r in tlog.records
    ]
    _write_csv(out / "tracks.csv", _TRACK_HEADER, track_rows)
    meas_rows = []
    blob_rows = []
    for n, blobs, measurements in zip(tlog.emissions, tlog.blobs, tlog.measurements):
        for m in measurements:
            meas_rows.append((n, m.r, float(np.degrees(m.theta)), m.area))
        for i, blob in enumerate(blobs):
            for u, v in blob.cells:
                blob_rows.append((n, i, int(u), int(v)))
    _write_csv(out / "measurements.csv", _MEAS_HEADER, meas_rows)
    _write_csv(out / "blobs.csv", _BLOB_HEADER, blob_rows)


def cmd_track(ns) -> int:
    cfg = _load_config(ns)
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    scn = cfg.scenario
    if ns.matrices:
        stream = _matrices_from_dir(Path(ns.matrices), scn)
        tlog = run_tracking(stream, cfg.detect, cfg.tracker)
        metrics = {
            "emissions": len(tlog.emissions),
            "total_blobs": int(tlog.num_blobs.sum()) if tlog.emissions else 0,
            "total_measurements": int(tlog.num_measurements.sum()) if tlog.emissions else 0,
            "track_ids": len({r.track_id for r in tlog.records}),
        }
    else:
        scn, plan = _prepared_scenario(scn)
        tlog = run_tracking(emission_matrices(scn, None, plan), cfg.detect, cfg.tracker)
        pos, vel, alive = truth_log(scn)
        result = RunResult(
            records=tlog.records,
            num_blobs=tlog.num_blobs,
            num_measurements=tlog.num_measurements,
            truth_pos=pos,
            truth_vel=vel,
            truth_alive=alive,
            scenario=scn,
            seed=scn.seed,
            runtime_s=0.0,
        )
        metrics = dataclasses.asdict(compute_metrics(result, cfg.eval_params))
    _write_tracking_logs(out, tlog)
    _write_json(out / "metrics.json", metrics)
    if ns.plot:
        _plot_tracks(out / "tracks.svg", tlog, scn if not ns.matrices else None)
    _write_manifest(
        out, "track", Path(ns.config), scn.seed, {"matrices": ns.matrices, "plot": ns.plot}
    )
    n_conf = len({r.track_id for r in tlog.records if r.status == "confirmed"})
    print(f"{len(tlog.emissions)} emissions, {n_conf} confirmed tracks; logs in {out}")
    return 0


def cmd_ingest(ns) -> int:
    cfg = _load_config(ns)
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    scn = cfg.scenario
    pcm = Path(ns.pcm)
    n_ch = scn.array.num_elements
    frame = 2 * n_ch
    size = pcm.stat().st_size
    if size % frame:
        raise FileFormatError(
            f"{pcm}: length {size} is not a whole number of {n_ch}-channel frames; "
            f"partial frame starts at byte offset {size - size % frame}"
        )
    samples = np.fromfile(pcm, dtype="<i2").reshape(-1, n_ch).T.astype(np.float64) / 32768.0
    per_emission = int(round(scn.emission_period * scn.f_s))
    length = min(per_emission, scn.buffer_len)
    replica = chirp_waveform(scn.waveform, scn.f_s)
    if length < replica.size:
        raise InvalidParameterError("emission segment shorter than the waveform")
    count = samples.shape[1] // per_emission
    plan = None
    if count:
        plan = BeamformPlan(
            scn.array, scn.beam_azimuths, scn.c, scn.f_s, length, replica=replica
        )
    for n in range(count):
        seg = samples[:, n * per_emission : n * per_emission + length]
        rows = plan.complex_rows(seg)
        adm = AngleDistanceMatrix(
            values=np.abs(rows).astype(np.float32),
            azimuths=scn.beam_azimuths,
            f_s=scn.f_s,
            c=scn.c,
            t=scn.emission_time(n),
        )
        _save_matrix_atomic(_matrix_path(out, n), adm)
    _write_manifest(
        out,
        "ingest",
        Path(ns.config),
        scn.seed,
        {"pcm": str(pcm), "emissions": count, "samples_per_emission": length},
    )
    print(f"ingested {count} emissions from {pcm} into {out}")
    return 0


def _parse_sweep_flag(text: str) -> tuple[str, tuple]:
    name, _, values = text.partition("=")
    if not values:
        raise ConfigError("--sweep expects NAME=v1,v2,... (e.g. P_fa=0.1,0.2)")
    try:
        vals = tuple(float(v) for v in values.split(","))
    except ValueError as exc:
        raise ConfigError(f"--sweep values must be numbers: {values!r}") from exc
    if name not in SWEEP_NAMES:
        raise ConfigError(f"--sweep param must be one of {sorted(SWEEP_NAMES)}")
    return SWEEP_NAMES[name], vals


def cmd_sweep(ns) -> int:
    cfg = _load_config(ns)
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.sweep
    if ns.sweep:
        param, values = _parse_sweep_flag(ns.sweep)
        seeds = spec.seeds if spec else tuple(range(10))
        spec = SweepSpec(param=param, values=values, seeds=seeds)
    if spec is None:
        raise ConfigError("no [sweep] section in the config and no --sweep flag")
    if ns.seed is not None:
        spec = replace(spec, seeds=tuple(range(ns.seed, ns.seed + len(spec.seeds))))

    def progress(seed, rows):
        log.info("sweep seed %s done (%d rows)", seed, len(rows))

    rows = run_sweep(cfg.scenario, cfg.detect, cfg.tracker, spec, cfg.eval_params, progress)
    csv_rows = []
    for row in rows:
        m = row.metrics
        conv = min((c for c in m.convergence if c is not None), default=None)
        csv_rows.append(
            (
                row.param,
                row.value,
                row.seed,
                m.mean_continuity,
                m.false_tracks,
                m.pos_rmse,
                m.vel_rmse,
                conv,
                m.runtime_s,
            )
        )
    _write_csv(out / "sweep.csv", _SWEEP_HEADER, csv_rows)
    agg = aggregate(rows)
    agg_header = ",".join(agg[0].keys())
    _write_csv(out / "aggregate.csv", agg_header, [tuple(a.values()) for a in agg])
    _plot_sweep(out / "sweep.svg", agg, spec.param)
    _write_manifest(
        out,
        "sweep",
        Path(ns.config),
        list(spec.seeds),
        {"param": spec.param, "values": list(spec.values)},
    )
    print(f"{spec.param} sweep, {len(spec.values)} values x {len(spec.seeds)} seeds")
    print(f"{'value':>10} {'continuity':>12} {'false':>8} {'dup':>6} {'runs':>5}")
    for a in agg:
        print(
            f"{a['value']:>10.4g} {a['continuity_mean']:>7.3f}+-{a['continuity_se']:<4.3f}"
            f"{a['false_mean']:>8.2f} {a['duplicate_mean']:>6.2f} {a['runs']:>5d}"
        )
    return 0


# The reference ring is held fixed across the grid: the summed-area
# implementation makes the pass linear in the cell count alone, so only
# U and L_s can stretch the workload.
_BENCH_GRID = (
    (60, 4000, (1, 1), (4, 4)),
    (120, 8000, (1, 1), (4, 4)),
    (240, 16000, (1, 1), (4, 4)),
    (480, 32000, (1, 1), (4, 4)),
)


def detection_work(num_beams: int, num_cells: int, cfg: CfarConfig) -> int:
    """Nominal operation count of one CFAR pass: cells times reference
    ring size."""
    gu, gv = cfg.guard
    wu, wv = cfg.train
    ring = (2 * wu + 1) * (2 * wv + 1) - (2 * gu + 1) * (2 * gv + 1)
    return num_beams * num_cells * ring


def bench_detection(grid=_BENCH_GRID, repeats: int = 3) -> list[dict]:
    """Time the CFAR stage on Rayleigh matrices over a size grid."""
    rng = np.random.default_rng(0)
    out = []
    for num_beams, num_cells, guard, train in grid:
        cfg = CfarConfig(p_fa=0.2, guard=guard, train=train)
        values = rayleigh_matrix(num_beams, num_cells, 1.0, rng).astype(np.float32)
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            ring_sum, ring_n = ring_energy(values, cfg)
            threshold_from_rings(ring_sum, ring_n, cfg.p_fa)
            best = min(best, time.perf_counter() - t0)
        out.append(
            {
                "U": num_beams,
                "L_s": num_cells,
                "guard": guard,
                "train": train,
                "work": detection_work(num_beams, num_cells, cfg),
                "seconds": best,
            }
        )
    return out


def cmd_bench(ns) -> int:
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    results = bench_detection(repeats=ns.repeats)
    rows = [
        (r["U"], r["L_s"], r["guard"][0], r["guard"][1], r["train"][0], r["train"][1], r["work"], r["seconds"])
        for r in results
    ]
    _write_csv(out / "bench.csv", "U,L_s,guard_u,guard_v,train_u,train_v,work,seconds", rows)
    work = np.log([r["work"] for r in results])
    secs = np.log([r["seconds"] for r in results])
    slope = float(np.polyfit(work, secs, 1)[0])
    _write_manifest(out, "bench", None, None, {"repeats": ns.repeats, "slope": slope})
    for r in results:
        print(f"U={r['U']:<4d} L_s={r['L_s']:<6d} work={r['work']:.3g} {r['seconds'] * 1e3:8.2f} ms")
    print(f"log-log slope vs work: {slope:.3f}")
    return 0


def _plot_tracks(path: Path, tlog: TrackingLog, scn: Scenario | None) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 7))
    by_id: dict[int, list] = {}
    for r in tlog.records:
        by_id.setdefault(r.track_id, []).append(r)
    cmap = plt.colormaps["tab10"]
    for tid, recs in sorted(by_id.items()):
        confirmed = [r for r in recs if r.status == "confirmed"]
        if not confirmed:
            continue
        xs = [r.x for r in confirmed]
        ys = [r.y for r in confirmed]
        ax.plot(xs, ys, ".", ms=3, color=cmap(tid % 10), label=f"track {tid}")
    if scn is not None:
        for tgt in scn.targets:
            t0 = scn.emission_time(tgt.birth)
            t1 = scn.emission_time(min(tgt.death, scn.num_emissions - 1))
            p0 = tgt.position + tgt.velocity * t0
            p1 = tgt.position + tgt.velocity * t1
            ax.plot([p0[0], p1[0]], [p0[1], p1[1]], "k--", lw=1)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal")
    if by_id:
        ax.legend(fontsize=7, loc="best")
    tmp = path.with_name(path.name + ".tmp")
    fig.savefig(tmp, format="svg")
    plt.close(fig)
    os.replace(tmp, path)


def _plot_sweep(path: Path, agg: list[dict], param: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if param == "n_c":
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
        xs = [a["value"] for a in agg]
        ax1.errorbar(xs, [a["false_mean"] for a in agg], yerr=[a["false_se"] for a in agg], fmt="o-")
        ax1.set_xlabel("confirmation threshold")
        ax1.set_ylabel("false tracks")
        ax2.errorbar(
            xs, [a["continuity_mean"] for a in agg], yerr=[a["continuity_se"] for a in agg], fmt="o-"
        )
        ax2.set_xlabel("confirmation threshold")
        ax2.set_ylabel("track continuity")
        ax2.set_ylim(0, 1.05)
    else:
        fig, ax = plt.subplots(figsize=(6, 5))
        ax.errorbar(
            [a["false_mean"] for a in agg],
            [a["continuity_mean"] for a in agg],
            xerr=[a["false_se"] for a in agg],
            yerr=[a["continuity_se"] for a in agg],
            fmt="o-",
        )
        for a in agg:
            ax.annotate(f"{a['value']:g}", (a["false_mean"], a["continuity_mean"]), fontsize=7)
        ax.set_xlabel("mean false tracks")
        ax.set_ylabel("track continuity")
        ax.set_ylim(0, 1.05)
    fig.tight_layout()
    tmp = path.with_name(path.name + ".tmp")
    fig.savefig(tmp, format="svg")
    plt.close(fig)
    os.replace(tmp, path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sonartbd",
        description="Active-sonar track-before-detect pipeline: simulation, "
        "detection, tracking and Monte Carlo evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="TOML run configuration")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")

    sp = sub.add_parser("simulate", help="write per-emission angle-distance matrices")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("track", help="run detection and tracking, write logs")
    common(sp)
    sp.add_argument("--matrices", default=None, help="directory of saved matrices to track instead of simulating")
    sp.add_argument("--plot", action="store_true", help="also write tracks.svg")
    sp.set_defaults(func=cmd_track)

    sp = sub.add_parser("ingest", help="convert raw interleaved int16 PCM into matrices")
    common(sp)
    sp.add_argument("--pcm", required=True, help="headerless little-endian int16 PCM file")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("sweep", help="Monte Carlo parameter sweep")
    common(sp)
    sp.add_argument("--sweep", default=None, help="override the sweep, e.g. P_fa=0.1,0.2,0.3")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("bench", help="time the detection stage over a size grid")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--repeats", type=int, default=3, help="timing repeats per grid point")
    sp.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("SONARTBD_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        return ns.func(ns)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except (InvalidParameterError, NumericalDegeneracyError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
