"""Beat detection: spectral flux onsets, autocorrelation tempo, grid phase.

The tracker assumes near-constant tempo (grid of period 60/bpm at the best
phase) rather than dynamic programming over a tempo curve. Click-aligned
editorial content is metronomic enough for that; expressive rubato is out of
scope.

Precision note: a raw integer-lag autocorrelation peak quantizes tempo to
the hop rate, and over 30 s even a 1% period error drifts the far end of the
grid by several hundred ms. `estimate_tempo` therefore refines the period
with parabolic interpolation at the peak and re-estimates it from the
highest usable lag multiple.
"""

import dataclasses

import numpy as np

from .audiofeat import N_FFT
from .errors import DataError

FRAME_FPS = 16.0  # rasterization rate for event timelines

_BPM_LO, _BPM_HI = 50.0, 220.0
_BPM_PREF_LO, _BPM_PREF_HI = 80.0, 160.0


@dataclasses.dataclass
class OnsetEnvelope:
    values: np.ndarray  # one per STFT hop, >= 0
    hop_rate_hz: float
    t0_s: float = 0.0  # wall-clock time of index 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if np.any(self.values < 0):
            raise DataError("onset envelope must be non-negative")

    @property
    def duration_s(self):
        return len(self.values) / self.hop_rate_hz


def spectral_flux(m):
    """Half-wave-rectified positive mel-amplitude differences, summed over bins.

    Indexing matches the spectrogram windows; t0 places index i at the window
    center, since that is where an impulse contributes most under the Hann
    taper (window-start timestamps read transients ~2 hops early).
    """
    if m.values.shape[0] < 2:
        raise DataError("need at least 2 spectrogram windows for flux")
    # cap keeps exp finite on degenerate (e.g. model-generated) inputs
    amp = np.exp(np.clip(m.values.astype(np.float64), None, 32.0))
    diff = np.clip(amp[1:] - amp[:-1], 0.0, None).sum(axis=1)
    vals = np.concatenate([[0.0], diff])  # keep index == window index
    t0 = 0.5 * N_FFT / m.sample_rate_hz
    return OnsetEnvelope(vals, m.frames_per_second, t0)


def _autocorr(x):
    n = len(x)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    ac = np.fft.irfft(f * np.conj(f), size)[:n]
    return ac


def _parabolic_offset(y_prev, y_peak, y_next):
    denom = y_prev - 2.0 * y_peak + y_next
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (y_prev - y_next) / denom, -0.5, 0.5))


def estimate_tempo(e):
    """Tempo in BPM from envelope autocorrelation, searched over 50-220 BPM.

    Octave ambiguity breaks toward the 80-160 BPM band: a half/double
    partner inside the band wins whenever its correlation is within 80% of
    the raw peak.
    """
    if e.duration_s < 4.0:
        raise DataError("need at least 4 s of envelope for tempo estimation")
    x = e.values.astype(np.float64)
    if not np.isfinite(x).all():
        raise DataError("no periodicity: non-finite onset envelope")
    if np.ptp(x) <= 1e-12:
        raise DataError("no periodicity: flat onset envelope")
    x = x - x.mean()
    ac = _autocorr(x)
    if ac[0] <= 0:
        raise DataError("no periodicity: zero-power envelope")
    ac = ac / ac[0]

    rate = e.hop_rate_hz
    lag_min = max(2, int(np.floor(60.0 * rate / _BPM_HI)))
    lag_max = min(len(ac) - 2, int(np.ceil(60.0 * rate / _BPM_LO)))
    if lag_max <= lag_min:
        raise DataError("envelope too short for the tempo search range")
    window = ac[lag_min:lag_max + 1]
    if np.max(window) <= 0:
        raise DataError("no periodicity: no positive autocorrelation peak in range")

    def score_at(lag):
        return ac[lag] if lag_min <= lag <= lag_max else -np.inf

    best = lag_min + int(np.argmax(window))
    # octave tie-break: prefer a partner lag landing in the 80-160 BPM band.
    # halving/doubling an integer lag can miss the true peak by one bin, so
    # each partner is the local maximum over its immediate neighborhood
    if not (_BPM_PREF_LO <= 60.0 * rate / best <= _BPM_PREF_HI):
        for approx in (best // 2, best * 2):
            cands = [p for p in (approx - 1, approx, approx + 1)
                     if p >= 2 and _BPM_PREF_LO <= 60.0 * rate / p <= _BPM_PREF_HI]
            if not cands:
                continue
            partner = max(cands, key=score_at)
            if score_at(partner) >= 0.8 * ac[best]:
                best = partner
                break

    # sub-hop refinement: parabolic at the peak, then read the period off the
    # highest in-range multiple of it (error divides by the multiple)
    lag = best + _parabolic_offset(ac[best - 1], ac[best], ac[best + 1])
    k_max = (len(ac) - 2) // best
    for k in range(min(k_max, 8), 1, -1):
        approx = int(round(lag * k))
        lo = max(1, approx - best // 4)
        hi = min(len(ac) - 2, approx + best // 4)
        if hi <= lo:
            continue
        sub = lo + int(np.argmax(ac[lo:hi + 1]))
        if ac[sub] <= 0:
            continue
        refined = sub + _parabolic_offset(ac[sub - 1], ac[sub], ac[sub + 1])
        lag = refined / k
        break

    bpm = 60.0 * rate / lag
    return float(np.clip(bpm, _BPM_LO, _BPM_HI))


def track_beats(e, bpm):
    """Timestamps of a fixed-tempo beat grid at the phase that maximizes
    summed envelope energy. Phase is searched at quarter-hop resolution.
    """
    if not (_BPM_LO <= bpm <= _BPM_HI):
        raise DataError(f"bpm {bpm} outside supported range [{_BPM_LO}, {_BPM_HI}]")
    x = e.values.astype(np.float64)
    rate = e.hop_rate_hz
    period = 60.0 * rate / bpm  # hops per beat
    n = len(x)

    def grid_energy(phase):
        pos = np.arange(phase, n - 1, period)
        lo = pos.astype(int)
        frac = pos - lo
        return float(np.sum(x[lo] * (1 - frac) + x[lo + 1] * frac))

    phases = np.arange(0.0, period, 0.25)
    scores = [grid_energy(p) for p in phases]
    phase = float(phases[int(np.argmax(scores))])

    beats = np.arange(phase, n, period) / rate + e.t0_s
    return [float(t) for t in beats if t <= e.duration_s]


def detect_beats(m):
    """Full chain on a log-mel spectrogram: flux -> tempo -> beat grid.

    Returns (beat timestamps, bpm).
    """
    env = spectral_flux(m)
    bpm = estimate_tempo(env)
    return track_beats(env, bpm), bpm
