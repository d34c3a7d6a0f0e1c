"""Pulse compression and delay-and-sum beamforming.

The receive chain per emission is: cross-correlate every channel with
the transmitted replica, apply per-beam fractional time advances in the
frequency domain, sum channels coherently and take the envelope of the
analytic signal. The result is the angle-distance matrix: one row per
steered beam, one column per two-way range sample.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.fft import next_fast_len

from .errors import FileFormatError, InvalidParameterError
from .scenario import ArrayGeometry, MultichannelBuffer, steering_delay

_MAGIC = b"ADM1"
# magic, U, L_s, f_s, az0, daz. Azimuth grid terms are double precision
# so a save/load round trip reproduces the beam angles bit for bit; the
# emission timestamp is not stored and travels with the run manifest.
_HEADER = struct.Struct("<4sIIfdd")
assert _HEADER.size == 32


@dataclass(frozen=True)
class AngleDistanceMatrix:
    """Envelope intensity per (beam, range sample).

    Attributes:
        values: nonnegative envelope, shape (U, L_s), float32.
        azimuths: steering azimuth per row, radians, strictly ascending
            within one full circle.
        f_s: range-axis sample rate in Hz.
        c: sound speed used for the two-way range mapping, m/s.
        t: emission timestamp in seconds.
    """

    values: np.ndarray
    azimuths: np.ndarray
    f_s: float
    c: float = 1500.0
    t: float = 0.0

    def __post_init__(self):
        vals = np.asarray(self.values)
        az = np.asarray(self.azimuths, dtype=float)
        if vals.ndim != 2 or az.shape != (vals.shape[0],):
            raise InvalidParameterError("matrix needs one azimuth per beam row")
        if az.size > 1:
            d = np.diff(az)
            if np.any(d <= 0.0) or az[-1] - az[0] >= 2.0 * np.pi:
                raise InvalidParameterError("beam azimuths must ascend within one circle")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "azimuths", az)

    @property
    def num_beams(self) -> int:
        return self.values.shape[0]

    @property
    def num_cells(self) -> int:
        return self.values.shape[1]

    def range_of(self, column) -> np.ndarray:
        """Two-way range r = v * c / (2 f_s) for a (fractional) column index."""
        return np.asarray(column, dtype=float) * self.c / (2.0 * self.f_s)


def replica_spectrum(replica: np.ndarray, nfft: int, normalize: bool) -> np.ndarray:
    """One-sided spectrum of the correlation replica, optionally unit energy."""
    d = np.asarray(replica, dtype=float)
    if normalize:
        energy = float(np.dot(d, d))
        if energy <= 0.0:
            raise InvalidParameterError("replica has zero energy")
        d = d / np.sqrt(energy)
    return np.fft.rfft(d, nfft)


def matched_filter(
    buffer: MultichannelBuffer, replica: np.ndarray, normalize: bool = False
) -> MultichannelBuffer:
    """Cross-correlate each channel with the replica.

    Output sample s holds sum_k x[s + k] d[k], so a peak at s marks an
    echo onset at sample s. Output length equals the input length; with
    normalize=True the replica is scaled to unit energy first, which is
    what the matrix-forming pipeline uses so amplitudes stay comparable
    across waveforms.
    """
    x = buffer.samples
    d = np.asarray(replica, dtype=float)
    if d.ndim != 1 or d.size == 0:
        raise InvalidParameterError("replica must be a nonempty 1-d array")
    if d.size > x.shape[1]:
        raise InvalidParameterError("replica longer than buffer")
    nfft = next_fast_len(x.shape[1] + d.size)
    spec = np.fft.rfft(x, nfft, axis=1) * np.conj(replica_spectrum(d, nfft, normalize))
    out = np.fft.irfft(spec, nfft, axis=1)[:, : x.shape[1]]
    return MultichannelBuffer(samples=out, f_s=buffer.f_s)


class BeamformPlan:
    """Precomputed transform state for repeated beamforming calls.

    Building the per-(beam, element, frequency) phase factors costs more
    than one emission's worth of FFTs, so pipelines that process many
    emissions with a fixed array, beam grid and buffer length should
    build the plan once and call complex_rows per emission.
    """

    def __init__(
        self,
        array: ArrayGeometry,
        azimuths: np.ndarray,
        c: float,
        f_s: float,
        buffer_len: int,
        replica: np.ndarray | None = None,
        dtype=np.complex64,
    ):
        azimuths = np.atleast_1d(np.asarray(azimuths, dtype=float))
        if buffer_len < 1:
            raise InvalidParameterError("buffer length must be positive")
        max_tau = float(np.max(np.linalg.norm(array.positions, axis=1))) / c
        pad = int(np.ceil(max_tau * f_s)) + 2
        n_rep = 0 if replica is None else len(replica)
        self.array = array
        self.azimuths = azimuths
        self.c = float(c)
        self.f_s = float(f_s)
        self.buffer_len = int(buffer_len)
        self.dtype = np.dtype(dtype)
        self.nfft = next_fast_len(buffer_len + n_rep + pad)
        freqs = np.fft.rfftfreq(self.nfft, d=1.0 / f_s)
        taus = np.stack([steering_delay(array, float(a), c) for a in azimuths])
        self._phases = np.exp(2j * np.pi * taus[:, :, None] * freqs[None, None, :]).astype(dtype)
        if replica is None:
            self._replica_conj = None
        else:
            self._replica_conj = np.conj(replica_spectrum(replica, self.nfft, normalize=True))

    def complex_rows(self, samples: np.ndarray) -> np.ndarray:
        """Analytic-signal beam outputs for one emission, shape (U, buffer_len)."""
        x = np.atleast_2d(np.asarray(samples))
        if x.shape != (self.array.num_elements, self.buffer_len):
            raise InvalidParameterError(
                f"expected samples of shape ({self.array.num_elements}, {self.buffer_len})"
            )
        spec = np.fft.rfft(x, self.nfft, axis=1)
        if self._replica_conj is not None:
            spec = spec * self._replica_conj
        beams = np.einsum("umf,mf->uf", self._phases, spec.astype(self.dtype))
        # Analytic signal: keep nonnegative frequencies, double the strictly
        # positive interior bins, inverse transform over the full length.
        beams[:, 1:-1] *= 2.0
        if self.nfft % 2 == 1:
            beams[:, -1] *= 2.0
        full = np.zeros((beams.shape[0], self.nfft), dtype=self.dtype)
        full[:, : beams.shape[1]] = beams
        return np.fft.ifft(full, axis=1)[:, : self.buffer_len].astype(self.dtype)


def beamform_complex(
    buffer: MultichannelBuffer,
    array: ArrayGeometry,
    azimuths: np.ndarray,
    c: float,
    replica: np.ndarray | None = None,
    dtype=np.complex64,
) -> np.ndarray:
    """Analytic-signal beam outputs, shape (U, L), before the envelope.

    Each channel is advanced by its steering delay for the given beam
    azimuth (fractional delays applied in the frequency domain) and the
    channels are summed without normalization, so a coherent source at
    the steered azimuth gains a factor M over a single element. When a
    replica is passed, matched filtering with the unit-energy replica is
    fused into the same transform.

    This function is linear in the input samples; the angle-distance
    matrix is its magnitude.
    """
    x = buffer.samples
    if array.num_elements != x.shape[0]:
        raise InvalidParameterError("channel count does not match array geometry")
    plan = BeamformPlan(
        array, azimuths, c, buffer.f_s, x.shape[1], replica=replica, dtype=dtype
    )
    return plan.complex_rows(x)


def delay_and_sum(
    buffer: MultichannelBuffer,
    array: ArrayGeometry,
    azimuths: np.ndarray,
    c: float,
    t: float = 0.0,
    replica: np.ndarray | None = None,
) -> AngleDistanceMatrix:
    """Envelope of the coherent beam sums as an angle-distance matrix."""
    rows = beamform_complex(buffer, array, azimuths, c, replica=replica)
    return AngleDistanceMatrix(
        values=np.abs(rows).astype(np.float32),
        azimuths=np.atleast_1d(np.asarray(azimuths, dtype=float)),
        f_s=buffer.f_s,
        c=c,
        t=t,
    )


def beam_pattern(
    array: ArrayGeometry,
    steer_azimuth: float,
    probe_azimuths: np.ndarray,
    freq: float,
    c: float,
) -> np.ndarray:
    """Narrowband array response in dB, 0 dB at the steered azimuth.

    gain(phi) = 20 log10 |sum_m exp(j 2 pi f (tau_m(phi) - tau_m(steer)))|
                - 20 log10 M
    """
    probe = np.atleast_1d(np.asarray(probe_azimuths, dtype=float))
    tau_steer = steering_delay(array, steer_azimuth, c)
    taus = np.stack([steering_delay(array, float(a), c) for a in probe])
    s = np.exp(2j * np.pi * freq * (taus - tau_steer[None, :])).sum(axis=1)
    m = array.num_elements
    return 20.0 * np.log10(np.maximum(np.abs(s), 1e-300)) - 20.0 * np.log10(m)


def save_matrix(path, adm: AngleDistanceMatrix) -> None:
    """Write the matrix in the flat binary format (32-byte header, then
    row-major little-endian float32 values).

    Only uniform beam grids are representable in the header.
    """
    az = adm.azimuths
    if az.size > 1:
        steps = np.diff(az)
        if not np.allclose(steps, steps[0], rtol=0.0, atol=1e-9):
            raise InvalidParameterError("binary format requires a uniform beam grid")
        daz = float(steps[0])
    else:
        daz = 0.0
    header = _HEADER.pack(
        _MAGIC, adm.num_beams, adm.num_cells, float(adm.f_s), float(az[0]), daz
    )
    data = np.ascontiguousarray(adm.values, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())


def load_matrix(path, c: float = 1500.0, t: float = 0.0) -> AngleDistanceMatrix:
    """Read a matrix written by save_matrix. Sound speed and timestamp
    are not part of the format and must be supplied by the caller."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FileFormatError(f"{path}: too short for a matrix header")
    magic, num_beams, num_cells, f_s, az0, daz = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}")
    expect = _HEADER.size + 4 * num_beams * num_cells
    if len(raw) != expect:
        raise FileFormatError(f"{path}: expected {expect} bytes, found {len(raw)}")
    values = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(num_beams, num_cells)
    azimuths = az0 + daz * np.arange(num_beams)
    return AngleDistanceMatrix(values=values.copy(), azimuths=azimuths, f_s=float(f_s), c=c, t=t)
