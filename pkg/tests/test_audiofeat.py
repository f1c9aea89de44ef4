import math

import numpy as np
import pytest

from vem import audiofeat as af
from vem.errors import DataError
from vem.rng import Rng

SR = af.SAMPLE_RATE


def sine(freq, duration_s=1.0, sr=SR, amp=0.5):
    t = np.arange(int(duration_s * sr)) / sr
    return (amp * np.sin(2 * np.pi * freq * t)).astype(np.float32)


# -- types -----------------------------------------------------------------


def test_waveform_validation():
    with pytest.raises(DataError):
        af.Waveform(np.zeros((2, 3)), SR)
    with pytest.raises(DataError):
        af.Waveform(np.array([0.0, np.nan]), SR)
    with pytest.raises(DataError):
        af.Waveform(np.zeros(4), 0)
    assert af.Waveform(np.zeros(SR), SR).duration_s == 1.0


def test_mel_type_checks_bins():
    with pytest.raises(DataError):
        af.MelSpectrogram(np.zeros((5, 13)), af.HOP, SR, 60)
    m = af.MelSpectrogram(np.zeros((5, 60)), af.HOP, SR, 60)
    assert m.frames_per_second == 62.5


# -- wav io ----------------------------------------------------------------


def test_wav_silence_round_trip(tmp_path):
    p = tmp_path / "s.wav"
    af.save_wav(p, af.Waveform(np.zeros(SR), SR))
    w = af.load_wav(p)
    assert w.sample_rate_hz == SR
    assert len(w.samples) == SR
    assert not w.samples.any()


def test_wav_round_trip_quantization(tmp_path):
    p = tmp_path / "r.wav"
    x = sine(440, 0.25)
    af.save_wav(p, af.Waveform(x, SR))
    back = af.load_wav(p).samples
    assert np.abs(back - x).max() < 1.0 / 32000


def test_pcm16_scaling_endpoints(tmp_path):
    import struct
    pcm = struct.pack("<2h", -32768, 32767)
    blob = (b"RIFF" + struct.pack("<I", 36 + len(pcm)) + b"WAVEfmt " +
            struct.pack("<IHHIIHH", 16, 1, 1, SR, SR * 2, 2, 16) +
            b"data" + struct.pack("<I", len(pcm)) + pcm)
    p = tmp_path / "e.wav"
    p.write_bytes(blob)
    w = af.load_wav(p)
    np.testing.assert_allclose(w.samples, [-1.0, 32767.0 / 32768.0], atol=1e-7)


def test_stereo_averaged_to_mono(tmp_path):
    import struct
    frames = struct.pack("<4h", 16384, -16384, 16384, -16384)  # L=+0.5 R=-0.5
    blob = (b"RIFF" + struct.pack("<I", 36 + len(frames)) + b"WAVEfmt " +
            struct.pack("<IHHIIHH", 16, 1, 2, SR, SR * 4, 4, 16) +
            b"data" + struct.pack("<I", len(frames)) + frames)
    p = tmp_path / "st.wav"
    p.write_bytes(blob)
    w = af.load_wav(p)
    assert len(w.samples) == 2
    np.testing.assert_allclose(w.samples, 0.0, atol=1e-7)


def test_load_wav_rejects_garbage(tmp_path):
    p = tmp_path / "g.wav"
    p.write_bytes(b"OggS" + b"\x00" * 40)
    with pytest.raises(DataError):
        af.load_wav(p)


def test_load_wav_rejects_unsupported_codec(tmp_path):
    import struct
    blob = (b"RIFF" + struct.pack("<I", 36) + b"WAVEfmt " +
            struct.pack("<IHHIIHH", 16, 7, 1, SR, SR, 1, 8) +
            b"data" + struct.pack("<I", 0))
    p = tmp_path / "u.wav"
    p.write_bytes(blob)
    with pytest.raises(DataError):
        af.load_wav(p)


# -- resampling ------------------------------------------------------------


def test_resample_identity():
    w = af.Waveform(sine(440, 0.5), SR)
    out = af.resample(w, SR)
    np.testing.assert_array_equal(out.samples, w.samples)


def test_resample_length_rule():
    w = af.Waveform(np.zeros(44100 + 137, dtype=np.float32), 44100)
    out = af.resample(w, 16000)
    assert len(out.samples) == round(len(w.samples) * 16000 / 44100)


def test_resample_preserves_tone():
    w = af.Waveform(sine(440, 1.0, sr=32000), 32000)
    out = af.resample(w, 16000)
    mag = af.stft_magnitude(out.samples).mean(axis=0)
    peak_hz = np.argmax(mag) * SR / af.N_FFT
    assert abs(peak_hz - 440.0) <= SR / af.N_FFT


def test_upsample_stays_band_limited():
    x = (Rng(3).gaussian(8000 * 2) * 0.2).astype(np.float32)
    out = af.resample(af.Waveform(x, 8000), 16000)
    spec = np.abs(np.fft.rfft(out.samples.astype(np.float64))) ** 2
    freqs = np.fft.rfftfreq(len(out.samples), 1.0 / 16000)
    hi = spec[freqs > 4100].mean()
    lo = spec[(freqs > 200) & (freqs < 3900)].mean()
    assert 10 * math.log10(hi / lo) < -40


# -- stft / mel ------------------------------------------------------------


def test_framing_formula_random_lengths():
    r = Rng(7)
    for _ in range(50):
        n = int(r.integers(af.N_FFT, 50000)[0])
        mag = af.stft_magnitude(np.zeros(n))
        assert mag.shape == (1 + (n - af.N_FFT) // af.HOP, af.N_FFT // 2 + 1)


def test_stft_rejects_short_input():
    with pytest.raises(DataError):
        af.stft_magnitude(np.zeros(af.N_FFT - 1))


def test_parseval_on_random_signal():
    x = Rng(11).gaussian(5000)
    w = af.frame_count(len(x))
    idx = af.HOP * np.arange(w)[:, None] + np.arange(af.N_FFT)[None, :]
    frames = x[idx] * af.hann_window()[None, :]
    p_time = (frames ** 2).sum()
    spec = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    p_freq = (2 * spec.sum() - spec[:, 0].sum() - spec[:, -1].sum()) / af.N_FFT
    assert abs(p_freq - p_time) / p_time < 0.01


def test_filterbank_shape_and_bounds():
    fb = af.mel_filterbank()
    assert fb.shape == (60, af.N_FFT // 2 + 1)
    assert fb.min() >= 0.0 and fb.max() <= 1.0 + 1e-12
    assert (fb.max(axis=1) > 0).all()  # no dead bands


def test_logmel_silence_hits_floor():
    m = af.logmel(af.Waveform(np.zeros(SR), SR))
    np.testing.assert_allclose(m.values, math.log(af.LOG_FLOOR), atol=1e-5)


@pytest.mark.parametrize("k", [20, 30, 45])
def test_logmel_center_tone_peaks_in_band(k):
    freq = af.mel_center_freqs()[k]
    m = af.logmel(af.Waveform(sine(freq, 1.0), SR))
    assert (np.argmax(m.values, axis=1) == k).all()


def test_logmel_framing_10s():
    m = af.logmel(af.Waveform(np.zeros(10 * SR), SR))
    assert m.values.shape == (622, 60)


def test_logmel_requires_16k():
    with pytest.raises(DataError):
        af.logmel(af.Waveform(np.zeros(8000), 8000))


def test_logmel_deterministic():
    w = af.Waveform(sine(523.25, 0.5) + 0.01 * Rng(1).gaussian(SR // 2).astype(np.float32), SR)
    a = af.logmel(w).values
    b = af.logmel(w).values
    np.testing.assert_array_equal(a, b)


# -- griffin-lim -----------------------------------------------------------


def test_griffin_lim_recovers_tone():
    m = af.logmel(af.Waveform(sine(440, 1.0), SR))
    rec = af.griffin_lim(m, iters=40)
    mag = af.stft_magnitude(rec.samples).mean(axis=0)
    peak_hz = np.argmax(mag) * SR / af.N_FFT
    assert abs(peak_hz - 440.0) <= SR / af.N_FFT


def test_griffin_lim_silence():
    m = af.logmel(af.Waveform(np.zeros(SR), SR))
    rec = af.griffin_lim(m, iters=5)
    assert float(np.sqrt((rec.samples ** 2).mean())) < 1e-3


def test_griffin_lim_iteration_improves():
    w = af.Waveform(sine(440, 0.5) + sine(660, 0.5, amp=0.25), SR)
    m = af.logmel(w)
    def err(iters):
        rec = af.griffin_lim(m, iters=iters)
        back = af.logmel(af.Waveform(rec.samples[:len(w.samples)], SR))
        n = min(back.values.shape[0], m.values.shape[0])
        return float(np.abs(back.values[:n] - m.values[:n]).mean())
    assert err(60) <= err(1) + 1e-9


def test_griffin_lim_rejects_zero_iters():
    m = af.logmel(af.Waveform(np.zeros(SR), SR))
    with pytest.raises(DataError):
        af.griffin_lim(m, iters=0)


# -- snr -------------------------------------------------------------------


def test_snr_needs_one_second():
    with pytest.raises(DataError):
        af.estimate_snr(af.Waveform(np.zeros(SR // 2), SR))


def test_snr_silence_is_inf():
    assert af.estimate_snr(af.Waveform(np.zeros(SR), SR)) == math.inf


def test_snr_clean_tone_with_gaps_is_high():
    # tone over a near-silent floor: quietest frames read the floor
    x = np.concatenate([sine(440, 1.6), (1e-4 * Rng(2).gaussian(int(0.4 * SR))).astype(np.float32)])
    snr = af.estimate_snr(af.Waveform(x, SR))
    assert snr > 40.0


def test_snr_tone_in_silence_hits_sentinel():
    x = np.concatenate([sine(440, 1.6), np.zeros(int(0.4 * SR), dtype=np.float32)])
    assert af.estimate_snr(af.Waveform(x, SR)) == math.inf


def test_snr_equal_noise_fails_gate():
    a = 0.3
    x = sine(440, 2.0, amp=a) + (a * Rng(5).gaussian(2 * SR)).astype(np.float32)
    snr = af.estimate_snr(af.Waveform(x, SR))
    assert 0.0 <= snr < 6.0
    assert snr < 20.0


def test_snr_wall_to_wall_tone_near_zero():
    snr = af.estimate_snr(af.Waveform(sine(440, 2.0), SR))
    assert abs(snr) < 1.0
