"""TOML run configuration.

Angles are degrees in config files and radians everywhere else; the
conversion happens here and nowhere else. Unknown keys are rejected so
that typos fail loudly instead of silently running defaults.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - Python < 3.11
    import tomli as tomllib

from .detect import CfarConfig
from .errors import ConfigError, InvalidParameterError
from .evaluate import EvalParams, SweepSpec
from .pipeline import DetectParams
from .scenario import (
    ArrayGeometry,
    ClutterModel,
    Scenario,
    TargetTruth,
    Waveform,
    default_array,
)
from .track import MeasurementNoise, TrackerConfig


@dataclass(frozen=True)
class RunConfig:
    scenario: Scenario
    detect: DetectParams
    tracker: TrackerConfig
    eval_params: EvalParams
    sweep: SweepSpec | None


def _check_keys(section: dict, allowed: set[str], name: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")


def _num(section: dict, key: str, name: str, default=None):
    if key not in section:
        if default is None:
            raise ConfigError(f"[{name}] is missing required key {key!r}")
        return default
    v = section[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"[{name}] key {key!r} must be a number")
    return v


def _int(section: dict, key: str, name: str, default=None) -> int:
    v = _num(section, key, name, default)
    if v != int(v):
        raise ConfigError(f"[{name}] key {key!r} must be an integer")
    return int(v)


def _vector(value, key: str, name: str, length: int) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}] key {key!r} must be a list of numbers") from exc
    if arr.shape != (length,):
        raise ConfigError(f"[{name}] key {key!r} must have {length} entries")
    return arr


def load_toml(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc


def _build_waveform(section: dict) -> Waveform:
    _check_keys(section, {"f_start", "bandwidth", "duration"}, "scenario.waveform")
    return Waveform(
        f_start=float(_num(section, "f_start", "scenario.waveform")),
        bandwidth=float(_num(section, "bandwidth", "scenario.waveform")),
        duration=float(_num(section, "duration", "scenario.waveform")),
    )


def _build_target(section: dict, idx: int) -> TargetTruth:
    name = f"scenario.targets[{idx}]"
    _check_keys(section, {"position", "velocity", "birth", "death", "amplitude"}, name)
    if "position" not in section or "velocity" not in section:
        raise ConfigError(f"[{name}] needs position and velocity")
    kwargs = {}
    if "amplitude" in section:
        kwargs["amplitude"] = float(_num(section, "amplitude", name))
    return TargetTruth(
        position=_vector(section["position"], "position", name, 2),
        velocity=_vector(section["velocity"], "velocity", name, 2),
        birth=_int(section, "birth", name, 0),
        death=_int(section, "death", name, 10**9),
        **kwargs,
    )


def _build_array(section: dict | None) -> ArrayGeometry:
    if section is None:
        return default_array()
    _check_keys(section, {"elements", "count", "spacing", "radius"}, "array")
    if "elements" in section:
        if len(section) > 1:
            raise ConfigError("[array] takes either elements or count+spacing/radius, not both")
        try:
            pos = np.asarray(section["elements"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise ConfigError("[array] elements must be a list of [x, y] pairs") from exc
        if pos.ndim != 2 or pos.shape[1] != 2:
            raise ConfigError("[array] elements must be a list of [x, y] pairs")
        return ArrayGeometry(pos)
    count = _int(section, "count", "array")
    if ("spacing" in section) == ("radius" in section):
        raise ConfigError("[array] count needs exactly one of spacing (line) or radius (ring)")
    if "radius" in section:
        radius = float(_num(section, "radius", "array"))
        if radius <= 0.0:
            raise ConfigError("[array] radius must be positive")
        ang = 2.0 * np.pi * np.arange(count) / count
        return ArrayGeometry(np.column_stack([radius * np.cos(ang), radius * np.sin(ang)]))
    spacing = float(_num(section, "spacing", "array"))
    x = (np.arange(count) - (count - 1) / 2.0) * spacing
    return ArrayGeometry(np.column_stack([x, np.zeros(count)]))


_SCN_KEYS = {
    "c",
    "f_s",
    "emission_period",
    "num_emissions",
    "max_range",
    "U",
    "scr_db",
    "seed",
    "clutter",
    "clutter_scale",
    "waveform",
    "targets",
}


def build_scenario(raw: dict) -> Scenario:
    if "scenario" not in raw:
        raise ConfigError("missing [scenario] section")
    sc = raw["scenario"]
    _check_keys(sc, _SCN_KEYS, "scenario")
    if "waveform" not in sc:
        raise ConfigError("missing [scenario.waveform] section")
    kind = sc.get("clutter", "element")
    if kind not in ("element", "rayleigh"):
        raise ConfigError("[scenario] clutter must be 'element' or 'rayleigh'")
    targets = tuple(
        _build_target(t, i) for i, t in enumerate(sc.get("targets", []))
    )
    scr = sc.get("scr_db")
    if scr is not None:
        scr = float(_num(sc, "scr_db", "scenario"))
    try:
        return Scenario(
            waveform=_build_waveform(sc["waveform"]),
            array=_build_array(raw.get("array")),
            targets=targets,
            c=float(_num(sc, "c", "scenario", 1500.0)),
            f_s=float(_num(sc, "f_s", "scenario", 50_000.0)),
            emission_period=float(_num(sc, "emission_period", "scenario", 1.0)),
            num_emissions=_int(sc, "num_emissions", "scenario", 100),
            max_range=float(_num(sc, "max_range", "scenario", 250.0)),
            num_beams=_int(sc, "U", "scenario", 72),
            clutter=ClutterModel(kind, float(_num(sc, "clutter_scale", "scenario", 1.0))),
            scr_db=scr,
            seed=_int(sc, "seed", "scenario", 0),
        )
    except InvalidParameterError as exc:
        raise ConfigError(str(exc)) from exc


_CFAR_KEYS = {"P_fa", "guard", "train", "min_area", "max_area", "psi_r", "psi_theta"}


def build_detect(raw: dict) -> DetectParams:
    sec = raw.get("cfar", {})
    _check_keys(sec, _CFAR_KEYS, "cfar")
    guard = tuple(int(v) for v in _vector(sec.get("guard", [1, 1]), "guard", "cfar", 2))
    train = tuple(int(v) for v in _vector(sec.get("train", [4, 4]), "train", "cfar", 2))
    try:
        return DetectParams(
            cfar=CfarConfig(
                p_fa=float(_num(sec, "P_fa", "cfar", 0.2)), guard=guard, train=train
            ),
            min_area=_int(sec, "min_area", "cfar", 1),
            max_area=_int(sec, "max_area", "cfar", 500),
            psi_r=float(_num(sec, "psi_r", "cfar", 10.0)),
            psi_theta=float(np.deg2rad(_num(sec, "psi_theta", "cfar", 6.0))),
        )
    except InvalidParameterError as exc:
        raise ConfigError(str(exc)) from exc


_TRACKER_KEYS = {
    "sigma_r",
    "sigma_theta",
    "sigma_zeta",
    "G_r",
    "G_theta",
    "G_s",
    "N_c",
    "d1",
    "d2",
    "v_max",
}


def build_tracker(raw: dict) -> TrackerConfig:
    # Measurement noise has no sensible universal default, so sigma_r and
    # sigma_theta are the one pair of required tracker keys.
    sec = raw.get("tracker", {})
    _check_keys(sec, _TRACKER_KEYS, "tracker")
    try:
        return TrackerConfig(
            noise=MeasurementNoise(
                sigma_r=float(_num(sec, "sigma_r", "tracker")),
                sigma_theta=float(np.deg2rad(_num(sec, "sigma_theta", "tracker"))),
            ),
            sigma_zeta=float(_num(sec, "sigma_zeta", "tracker", 1e-4)),
            g_r=float(_num(sec, "G_r", "tracker", 10.0)),
            g_theta=float(np.deg2rad(_num(sec, "G_theta", "tracker", 10.0))),
            g_s=float(_num(sec, "G_s", "tracker", 0.1)),
            n_c=_int(sec, "N_c", "tracker", 5),
            d1=_int(sec, "d1", "tracker", 7),
            d2=_int(sec, "d2", "tracker", 15),
            v_max=float(_num(sec, "v_max", "tracker", 5.0)),
        )
    except InvalidParameterError as exc:
        raise ConfigError(str(exc)) from exc


def build_eval(raw: dict) -> EvalParams:
    sec = raw.get("eval", {})
    _check_keys(sec, {"d_assoc", "label_fraction", "vel_tol", "vel_window"}, "eval")
    try:
        return EvalParams(
            d_assoc=float(_num(sec, "d_assoc", "eval", 15.0)),
            label_fraction=float(_num(sec, "label_fraction", "eval", 0.5)),
            vel_tol=float(_num(sec, "vel_tol", "eval", 0.3)),
            vel_window=_int(sec, "vel_window", "eval", 10),
        )
    except InvalidParameterError as exc:
        raise ConfigError(str(exc)) from exc


SWEEP_NAMES = {"P_fa": "p_fa", "N_c": "n_c", "scr_db": "scr_db"}


def build_sweep(raw: dict) -> SweepSpec | None:
    if "sweep" not in raw:
        return None
    sec = raw["sweep"]
    _check_keys(sec, {"param", "values", "seeds"}, "sweep")
    param = sec.get("param")
    if param not in SWEEP_NAMES:
        raise ConfigError(f"[sweep] param must be one of {sorted(SWEEP_NAMES)}")
    values = sec.get("values")
    if not isinstance(values, list) or not values:
        raise ConfigError("[sweep] values must be a non-empty list")
    seeds = sec.get("seeds")
    if isinstance(seeds, int) and not isinstance(seeds, bool):
        seeds_t = tuple(range(seeds))
    elif isinstance(seeds, list) and seeds:
        seeds_t = tuple(int(s) for s in seeds)
    else:
        raise ConfigError("[sweep] seeds must be an int count or a non-empty list")
    try:
        return SweepSpec(param=SWEEP_NAMES[param], values=tuple(values), seeds=seeds_t)
    except InvalidParameterError as exc:
        raise ConfigError(str(exc)) from exc


def load_run_config(path: str | Path) -> RunConfig:
    raw = load_toml(path)
    known = {"scenario", "array", "cfar", "tracker", "eval", "sweep"}
    _check_keys(raw, known, "top level")
    return RunConfig(
        scenario=build_scenario(raw),
        detect=build_detect(raw),
        tracker=build_tracker(raw),
        eval_params=build_eval(raw),
        sweep=build_sweep(raw),
    )
