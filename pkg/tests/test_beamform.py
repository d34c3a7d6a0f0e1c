"""Pulse compression, delay-and-sum, and matrix file format checks."""

import numpy as np
import pytest

from sonartbd.beamform import (
    AngleDistanceMatrix,
    BeamformPlan,
    beam_pattern,
    beamform_complex,
    delay_and_sum,
    load_matrix,
    matched_filter,
    replica_spectrum,
    save_matrix,
)
from sonartbd.errors import FileFormatError, InvalidParameterError
from sonartbd.scenario import (
    ArrayGeometry,
    MultichannelBuffer,
    Scenario,
    TargetTruth,
    Waveform,
    chirp_waveform,
    default_array,
    target_echo_channels,
)

WF = Waveform(f_start=10_000.0, bandwidth=10_000.0, duration=0.01)
F_S = 50_000.0


def source_scenario(r=60.0, az_deg=90.0, num_beams=36, array=None):
    pos = r * np.array([np.cos(np.deg2rad(az_deg)), np.sin(np.deg2rad(az_deg))])
    tgt = TargetTruth(position=pos, velocity=[0.0, 0.0], amplitude=1.0)
    return Scenario(
        waveform=WF,
        array=array or default_array(),
        targets=(tgt,),
        f_s=F_S,
        max_range=120.0,
        num_beams=num_beams,
    )


class TestMatchedFilter:
    def test_peak_at_echo_onset(self):
        d = chirp_waveform(WF, F_S)
        x = np.zeros(4000)
        x[1200 : 1200 + len(d)] = d
        buf = MultichannelBuffer(samples=x[None, :], f_s=F_S)
        out = matched_filter(buf, d).samples[0]
        assert len(out) == 4000
        assert np.argmax(out) == 1200
        # zero-lag autocorrelation equals the replica energy
        assert out[1200] == pytest.approx(np.sum(d * d), rel=1e-9)

    def test_compression_width(self):
        # after compression the -3 dB main lobe is about f_s/B samples wide
        d = chirp_waveform(WF, F_S)
        x = np.zeros(4000)
        x[1000 : 1000 + len(d)] = d
        buf = MultichannelBuffer(samples=x[None, :], f_s=F_S)
        env = np.abs(
            matched_filter(buf, d).samples[0]
            + 1j * np.imag(np.fft.ifft(np.fft.fft(matched_filter(buf, d).samples[0])))
        )
        peak = np.max(matched_filter(buf, d).samples[0])
        above = np.sum(matched_filter(buf, d).samples[0] > 0.5 * peak)
        assert above <= 12  # 50 kHz / 10 kHz = 5 samples, envelope ripple allowed

    def test_normalized_replica_unit_energy(self):
        d = 3.0 * chirp_waveform(WF, F_S)
        spec = replica_spectrum(d, 2048, normalize=True)
        # Parseval: sum |D_k|^2 over the full FFT equals nfft * energy
        full = np.fft.fft(d / np.sqrt(np.sum(d * d)), 2048)
        assert np.sum(np.abs(full) ** 2) / 2048 == pytest.approx(1.0, rel=1e-9)

    def test_validation(self):
        buf = MultichannelBuffer(samples=np.zeros((1, 100)), f_s=F_S)
        with pytest.raises(InvalidParameterError):
            matched_filter(buf, np.zeros(0))
        with pytest.raises(InvalidParameterError):
            matched_filter(buf, np.zeros(101))


class TestBeamformer:
    def test_source_at_beam_center(self):
        scn = source_scenario()
        ch = target_echo_channels(scn, scn.targets[0], 0)
        buf = MultichannelBuffer(samples=ch, f_s=F_S)
        d = chirp_waveform(WF, F_S)
        adm = delay_and_sum(buf, scn.array, scn.beam_azimuths, scn.c, replica=d)
        u, v = np.unravel_index(np.argmax(adm.values), adm.values.shape)
        assert scn.beam_azimuths[u] == pytest.approx(np.deg2rad(90.0))
        assert abs(v - 4000) <= 1  # two-way range index 2*60/1500*50e3

    def test_coherent_gain_is_element_count(self):
        scn = source_scenario()
        ch = target_echo_channels(scn, scn.targets[0], 0)
        d = chirp_waveform(WF, F_S)
        buf = MultichannelBuffer(samples=ch, f_s=F_S)
        adm = delay_and_sum(buf, scn.array, scn.beam_azimuths, scn.c, replica=d)
        m = scn.array.num_elements
        # single-element reference: the same echo with no steering offset,
        # compressed with the unit-energy replica, envelope read on-grid
        x = np.zeros(scn.buffer_len)
        x[4000 : 4000 + len(d)] = d
        mf = matched_filter(
            MultichannelBuffer(samples=x[None, :], f_s=F_S), d, normalize=True
        ).samples[0]
        spec = np.fft.fft(mf)
        spec[1 : len(spec) // 2] *= 2.0
        spec[len(spec) // 2 + 1 :] = 0.0
        ref_peak = np.max(np.abs(np.fft.ifft(spec)))
        gain = np.max(adm.values) / ref_peak
        assert gain == pytest.approx(m, rel=0.01)

    def test_linearity(self):
        scn = source_scenario()
        ch = target_echo_channels(scn, scn.targets[0], 0)
        d = chirp_waveform(WF, F_S)
        rows1 = beamform_complex(
            MultichannelBuffer(samples=ch, f_s=F_S), scn.array, scn.beam_azimuths, scn.c, replica=d
        )
        rows3 = beamform_complex(
            MultichannelBuffer(samples=3.0 * ch, f_s=F_S),
            scn.array,
            scn.beam_azimuths,
            scn.c,
            replica=d,
        )
        scale = np.abs(rows1).max()
        assert np.abs(rows3 - 3.0 * rows1).max() <= 1e-4 * 3.0 * scale

    def test_plan_matches_one_shot(self):
        scn = source_scenario()
        ch = target_echo_channels(scn, scn.targets[0], 0)
        d = chirp_waveform(WF, F_S)
        plan = BeamformPlan(scn.array, scn.beam_azimuths, scn.c, F_S, ch.shape[1], replica=d)
        rows_plan = plan.complex_rows(ch)
        rows_direct = beamform_complex(
            MultichannelBuffer(samples=ch, f_s=F_S), scn.array, scn.beam_azimuths, scn.c, replica=d
        )
        assert np.array_equal(rows_plan, rows_direct)

    def test_channel_count_mismatch(self):
        scn = source_scenario()
        buf = MultichannelBuffer(samples=np.zeros((3, 100)), f_s=F_S)
        with pytest.raises(InvalidParameterError):
            beamform_complex(buf, scn.array, scn.beam_azimuths, scn.c)

    def test_beam_pattern_peak_at_steer(self):
        arr = default_array()
        probes = np.deg2rad(np.arange(0.0, 360.0, 1.0))
        pat = beam_pattern(arr, np.deg2rad(45.0), probes, 15_000.0, 1500.0)
        assert pat[45] == pytest.approx(0.0, abs=1e-9)
        assert np.max(pat) <= 1e-9


class TestMatrixFormat:
    def make_adm(self):
        vals = np.arange(12, dtype=np.float32).reshape(3, 4)
        az = np.array([0.0, 2.0 * np.pi / 3.0, 4.0 * np.pi / 3.0])
        return AngleDistanceMatrix(values=vals, azimuths=az, f_s=F_S, c=1500.0, t=2.5)

    def test_round_trip(self, tmp_path):
        adm = self.make_adm()
        p = tmp_path / "m.adm"
        save_matrix(p, adm)
        back = load_matrix(p, c=1500.0, t=2.5)
        assert np.array_equal(back.values, adm.values)
        assert np.allclose(back.azimuths, adm.azimuths)
        assert back.f_s == adm.f_s
        assert back.t == 2.5

    def test_range_of(self):
        adm = self.make_adm()
        # sample v corresponds to two-way travel of v / f_s seconds
        assert adm.range_of(100) == pytest.approx(100 * 1500.0 / (2.0 * F_S))

    def test_bad_magic_rejected(self, tmp_path):
        adm = self.make_adm()
        p = tmp_path / "m.adm"
        save_matrix(p, adm)
        raw = bytearray(p.read_bytes())
        raw[:4] = b"JUNK"
        p.write_bytes(bytes(raw))
        with pytest.raises(FileFormatError):
            load_matrix(p)

    def test_truncated_payload_rejected(self, tmp_path):
        adm = self.make_adm()
        p = tmp_path / "m.adm"
        save_matrix(p, adm)
        raw = p.read_bytes()
        p.write_bytes(raw[:-5])
        with pytest.raises(FileFormatError):
            load_matrix(p)

    def test_nonuniform_grid_rejected(self, tmp_path):
        vals = np.zeros((3, 4), dtype=np.float32)
        az = np.array([0.0, 1.0, 2.5])
        adm = AngleDistanceMatrix(values=vals, azimuths=az, f_s=F_S)
        with pytest.raises(InvalidParameterError):
            save_matrix(tmp_path / "m.adm", adm)
