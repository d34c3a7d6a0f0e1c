"""Scenario description and synthetic multichannel echo generation.

Emissions are the unit of time: the array transmits a chirp once per
emission period and records a fixed-length buffer per hydrophone.
Targets follow constant-velocity trajectories in the horizontal plane
and reflect a delayed copy of the transmitted waveform into every
channel. Azimuths are measured counterclockwise from the +x axis and
kept in radians everywhere inside the library.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidParameterError

TWO_PI = 2.0 * np.pi


def wrap_angle(theta):
    """Wrap an angle (scalar or array, radians) into (-pi, pi]."""
    wrapped = np.mod(-np.asarray(theta) + np.pi, TWO_PI)
    return np.pi - wrapped


def angle_diff(a, b):
    """Smallest signed difference a - b on the circle, in (-pi, pi]."""
    return wrap_angle(np.asarray(a) - np.asarray(b))


@dataclass(frozen=True)
class Waveform:
    """Linear frequency-modulated chirp descriptor.

    Attributes:
        f_start: sweep start frequency in Hz.
        bandwidth: swept bandwidth in Hz (sweep runs f_start .. f_start + bandwidth).
        duration: pulse length in seconds.
    """

    f_start: float
    bandwidth: float
    duration: float

    def __post_init__(self):
        if self.duration <= 0.0:
            raise InvalidParameterError("waveform duration must be positive")
        if self.bandwidth <= 0.0:
            raise InvalidParameterError("waveform bandwidth must be positive")
        if self.f_start < 0.0:
            raise InvalidParameterError("waveform start frequency must be >= 0")

    @property
    def f_end(self) -> float:
        return self.f_start + self.bandwidth


@dataclass(frozen=True)
class ArrayGeometry:
    """Planar hydrophone array given by element positions in meters."""

    positions: np.ndarray  # (M, 2)

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 2:
            raise InvalidParameterError("array positions must be (M, 2) with M >= 2")
        if not np.all(np.isfinite(pos)):
            raise InvalidParameterError("array positions must be finite")
        if len({(float(x), float(y)) for x, y in pos}) != pos.shape[0]:
            raise InvalidParameterError("array positions must be distinct")
        object.__setattr__(self, "positions", pos)

    @property
    def num_elements(self) -> int:
        return self.positions.shape[0]


def default_array() -> ArrayGeometry:
    """Four-hydrophone planar cross used by the sea-trial floater,
    coordinates in meters."""
    return ArrayGeometry(
        positions=np.array(
            [(-0.385, 0.0), (0.0, 0.395), (0.405, 0.0), (0.0, -0.405)]
        )
    )


@dataclass(frozen=True)
class TargetTruth:
    """Constant-velocity point target.

    Attributes:
        position: position at t = 0 in meters, shape (2,).
        velocity: velocity in m/s, shape (2,).
        birth: first emission index at which the target exists.
        death: last emission index (inclusive).
        amplitude: linear echo amplitude; None until calibrated against
            a requested signal-to-clutter ratio.
    """

    position: np.ndarray
    velocity: np.ndarray
    birth: int = 0
    death: int = 10**9
    amplitude: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(2))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float).reshape(2))
        if self.death < self.birth:
            raise InvalidParameterError("target death emission precedes birth")

    def alive(self, n: int) -> bool:
        return self.birth <= n <= self.death


@dataclass(frozen=True)
class ClutterModel:
    """Background model: element-domain white Gaussian noise of the given
    standard deviation, or matrix-domain Rayleigh clutter of the given scale."""

    kind: str = "element"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("element", "rayleigh"):
            raise InvalidParameterError("clutter kind must be 'element' or 'rayleigh'")
        if self.scale <= 0.0:
            raise InvalidParameterError("clutter scale must be positive")


@dataclass(frozen=True)
class Scenario:
    """Complete description of one simulated deployment."""

    waveform: Waveform
    array: ArrayGeometry
    targets: tuple[TargetTruth, ...]
    c: float = 1500.0
    f_s: float = 50_000.0
    emission_period: float = 1.0
    num_emissions: int = 100
    max_range: float = 250.0
    num_beams: int = 72
    clutter: ClutterModel = field(default_factory=ClutterModel)
    scr_db: float | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        if self.c <= 0.0 or self.f_s <= 0.0:
            raise InvalidParameterError("sound speed and sample rate must be positive")
        if self.f_s <= 2.0 * self.waveform.f_end:
            raise InvalidParameterError(
                f"sample rate {self.f_s} Hz cannot represent waveform up to "
                f"{self.waveform.f_end} Hz"
            )
        if self.emission_period <= 0.0:
            raise InvalidParameterError("emission period must be positive")
        if self.num_emissions < 1:
            raise InvalidParameterError("need at least one emission")
        if self.max_range <= 0.0:
            raise InvalidParameterError("max range must be positive")
        if self.num_beams < 1:
            raise InvalidParameterError("need at least one beam")
        if self.emission_period * self.c / 2.0 < self.max_range:
            raise InvalidParameterError("emission period too short for max range")

    @property
    def buffer_len(self) -> int:
        """Samples per channel covering the two-way travel to max range."""
        return int(round(2.0 * self.max_range / self.c * self.f_s))

    @property
    def beam_azimuths(self) -> np.ndarray:
        """Uniform steering grid over the full circle, radians, ascending."""
        return np.arange(self.num_beams) * (TWO_PI / self.num_beams)

    def emission_time(self, n: int) -> float:
        return n * self.emission_period

    def with_amplitudes(self, amplitudes) -> "Scenario":
        """Copy of the scenario with per-target echo amplitudes filled in."""
        if len(amplitudes) != len(self.targets):
            raise InvalidParameterError("one amplitude per target required")
        new_targets = tuple(
            replace(t, amplitude=float(a)) for t, a in zip(self.targets, amplitudes)
        )
        return replace(self, targets=new_targets)


@dataclass(frozen=True)
class MultichannelBuffer:
    """One emission worth of per-hydrophone samples, shape (M, L)."""

    samples: np.ndarray
    f_s: float

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.samples))
        object.__setattr__(self, "samples", s)

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    def __len__(self) -> int:
        return self.samples.shape[1]


def chirp_waveform(wf: Waveform, f_s: float) -> np.ndarray:
    """Sampled unit-amplitude chirp, length round(duration * f_s).

    The instantaneous frequency sweeps linearly from f_start to
    f_start + bandwidth over the pulse duration.
    """
    if f_s <= 2.0 * wf.f_end:
        raise InvalidParameterError("sample rate below Nyquist for this waveform")
    n = int(round(wf.duration * f_s))
    t = np.arange(n) / f_s
    rate = wf.bandwidth / wf.duration
    return np.cos(TWO_PI * (wf.f_start * t + 0.5 * rate * t * t))


def steering_delay(array: ArrayGeometry, azimuth: float, c: float) -> np.ndarray:
    """Per-element delay tau_m = p_m . u(azimuth) / c, shape (M,).

    A positive delay means the element records the wavefront from that
    azimuth later than the array origin; synthesis and beamforming use
    the same convention so they cancel exactly.
    """
    unit = np.array([np.cos(azimuth), np.sin(azimuth)])
    return array.positions @ unit / c


def true_state(target: TargetTruth, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Target (position, velocity) at time t seconds."""
    return target.position + target.velocity * t, target.velocity.copy()


def _sample_chirp_delayed(wf: Waveform, f_s: float, length: int, delay: float) -> np.ndarray:
    """Chirp evaluated on the buffer sample grid with an exact fractional delay."""
    t = np.arange(length) / f_s - delay
    mask = (t >= 0.0) & (t < wf.duration)
    out = np.zeros(length)
    tm = t[mask]
    rate = wf.bandwidth / wf.duration
    out[mask] = np.cos(TWO_PI * (wf.f_start * tm + 0.5 * rate * tm * tm))
    return out


def target_echo_channels(scn: Scenario, target: TargetTruth, n: int) -> np.ndarray:
    """Noise-free unit-amplitude echo of one target across all channels.

    Each channel m receives the waveform delayed by the two-way travel
    time 2 r / c plus the steering delay of the target azimuth. Echoes
    whose support falls outside the buffer are silently truncated.
    Returns zeros when the target is not alive at emission n.
    """
    length = scn.buffer_len
    m = scn.array.num_elements
    out = np.zeros((m, length))
    if not target.alive(n):
        return out
    pos, _ = true_state(target, scn.emission_time(n))
    r = float(np.hypot(pos[0], pos[1]))
    az = float(np.arctan2(pos[1], pos[0]))
    base_delay = 2.0 * r / scn.c
    taus = steering_delay(scn.array, az, scn.c)
    for i in range(m):
        out[i] = _sample_chirp_delayed(scn.waveform, scn.f_s, length, base_delay + taus[i])
    return out


def clutter_channels(scn: Scenario, rng: np.random.Generator) -> np.ndarray:
    """Element-domain white Gaussian background, shape (M, L)."""
    if scn.clutter.kind != "element":
        raise InvalidParameterError("clutter_channels requires element-domain clutter")
    return scn.clutter.scale * rng.standard_normal((scn.array.num_elements, scn.buffer_len))


def emission_rng(seed: int, n: int) -> np.random.Generator:
    """Deterministic per-emission generator, independent of call order."""
    return np.random.default_rng(np.random.SeedSequence([seed, n]))


def synthesize_emission(scn: Scenario, n: int, rng: np.random.Generator) -> MultichannelBuffer:
    """Superpose all live target echoes and background noise for emission n.

    Targets must have calibrated amplitudes. The returned buffer is
    real-valued with arbitrary linear units.
    """
    if not 0 <= n < scn.num_emissions:
        raise InvalidParameterError(f"emission index {n} outside 0..{scn.num_emissions - 1}")
    samples = clutter_channels(scn, rng)
    for target in scn.targets:
        if not target.alive(n):
            continue
        if target.amplitude is None:
            raise InvalidParameterError("target amplitude not calibrated; set scr_db or amplitude")
        samples += target.amplitude * target_echo_channels(scn, target, n)
    return MultichannelBuffer(samples=samples, f_s=scn.f_s)


def rayleigh_matrix(num_beams: int, num_cells: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. Rayleigh field in the matrix domain, for detector tests."""
    if scale <= 0.0:
        raise InvalidParameterError("Rayleigh scale must be positive")
    return rng.rayleigh(scale, (num_beams, num_cells))


def complex_clutter_matrix(
    num_beams: int, num_cells: int, scale: float, rng: np.random.Generator
) -> np.ndarray:
    """Circular complex Gaussian field whose envelope is Rayleigh(scale).

    Matrix-domain counterpart of element white noise with the spatial
    correlation stripped: every cell is independent, so blob statistics
    depend only on the detector, not on the beam pattern.
    """
    if scale <= 0.0:
        raise InvalidParameterError("Rayleigh scale must be positive")
    shape = (num_beams, num_cells)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
