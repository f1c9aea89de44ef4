"""Shared test utilities: reference implementations and fixture builders."""

import numpy as np

from vem.audiofeat import SAMPLE_RATE, Waveform
from vem.parsing import (Storyboard, VideoAnnotation, build_frame_features,
                         toy_text_embed, toy_visual_embed)
from vem.timeline import TimestampSet


def splitmix64_reference(seed, n):
    """Independent pure-python SplitMix64: n raw 64-bit outputs."""
    mask = (1 << 64) - 1
    state = seed & mask
    out = []
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & mask
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        z = z ^ (z >> 31)
        out.append(z)
    return out


def max_bipartite_matching(a, b, tol_s):
    """Reference maximum matching size via augmenting paths.

    Edges connect a[i] to b[j] when |a[i] - b[j]| <= tol_s.
    """
    adj = [[j for j, y in enumerate(b) if abs(x - y) <= tol_s] for x in a]
    match_of_b = [-1] * len(b)

    def augment(i, seen):
        for j in adj[i]:
            if seen[j]:
                continue
            seen[j] = True
            if match_of_b[j] < 0 or augment(match_of_b[j], seen):
                match_of_b[j] = i
                return True
        return False

    count = 0
    for i in range(len(a)):
        if augment(i, [False] * len(b)):
            count += 1
    return count


def click_track(bpm, duration_s=30.0, seed=0, click_amp=0.8, noise_amp=5e-4,
                phase_s=0.0):
    """Noise bed plus a decaying click burst on every beat of a fixed grid.

    Returns (Waveform, beat_times).
    """
    from vem.rng import Rng
    rng = Rng(seed)
    n = int(duration_s * SAMPLE_RATE)
    y = rng.normal(n).astype(np.float32) * noise_amp
    period = 60.0 / bpm
    t = phase_s
    beats = []
    while t < duration_s - 0.05:
        i = int(round(t * SAMPLE_RATE))
        burst = rng.normal(480).astype(np.float32) * np.exp(-np.arange(480) / 60.0)
        take = min(480, n - i)
        y[i:i + take] += click_amp * burst[:take]
        beats.append(t)
        t += period
    return Waveform(np.clip(y, -1.0, 1.0), SAMPLE_RATE), beats


def make_annotation(duration_s=10.0, bounds=(0.0, 4.0, 10.0), transitions=(4.0,),
                    video_id="fixture", feature_dim=64, with_frames=True):
    """Hand-built annotation with storyboards between consecutive bounds."""
    boards = []
    for i in range(len(bounds) - 1):
        start, end = bounds[i], bounds[i + 1]
        text = f"scene {i} of {video_id}"
        boards.append(Storyboard(
            index=i, start_s=start, duration_s=end - start, text=text,
            text_feat=toy_text_embed(text, feature_dim),
            visual_feat=toy_visual_embed(text, feature_dim)))
    ann = VideoAnnotation(
        video_id=video_id, duration_s=duration_s,
        global_caption=f"caption for {video_id}",
        caption_feat=toy_text_embed(f"caption for {video_id}", feature_dim),
        emotion_tags=["fixture"], tag_feat=toy_text_embed("fixture", feature_dim),
        storyboards=boards,
        transitions=TimestampSet(sorted(transitions), duration_s),
        frame_features=None)
    if with_frames:
        ann.frame_features = build_frame_features(ann)
    return ann
