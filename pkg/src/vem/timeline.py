"""Event-timeline algebra on a 16 fps frame grid.

Events live as continuous timestamps for as long as possible and are only
rasterized (frame = floor(t * fps)) at the last step, so sub-frame shifts
survive alignment operations. Matching between two timestamp sets is greedy
ascending one-to-one within a symmetric tolerance; on sorted inputs with
interval constraints this attains the maximum matching, which the test suite
cross-checks against a brute-force bipartite oracle.
"""

import dataclasses
import json

import numpy as np

from .errors import DataError

DEFAULT_FPS = 16.0
DEFAULT_TOL_S = 0.5


@dataclasses.dataclass
class EventTimeline:
    fps: float
    frames: np.ndarray  # binary
    duration_s: float

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.uint8)
        if not np.all((self.frames == 0) | (self.frames == 1)):
            raise DataError("timeline frames must be binary")
        want = int(np.ceil(self.duration_s * self.fps))
        if len(self.frames) != want:
            raise DataError(f"timeline length {len(self.frames)} != ceil(duration*fps) = {want}")


@dataclasses.dataclass
class TimestampSet:
    times_s: list
    duration_s: float

    def __post_init__(self):
        self.times_s = [float(t) for t in self.times_s]
        if any(b < a for a, b in zip(self.times_s, self.times_s[1:])):
            raise DataError("timestamps must be sorted ascending")
        if self.times_s and (self.times_s[0] < 0 or self.times_s[-1] > self.duration_s):
            raise DataError(f"timestamps must lie in [0, {self.duration_s}]")

    def __len__(self):
        return len(self.times_s)


def from_timestamps(ts, fps=DEFAULT_FPS):
    """Rasterize to a binary frame sequence; colliding timestamps collapse."""
    n = int(np.ceil(ts.duration_s * fps))
    frames = np.zeros(n, dtype=np.uint8)
    for t in ts.times_s:
        idx = int(np.floor(t * fps))
        if idx >= n:
            raise DataError(f"timestamp {t} rasterizes past the timeline (duration {ts.duration_s})")
        frames[idx] = 1
    return EventTimeline(fps, frames, ts.duration_s)


def timestamps_of(tl):
    """Set frames back to continuous time at frame starts (index / fps)."""
    times = [i / tl.fps for i in np.flatnonzero(tl.frames)]
    return TimestampSet(times, tl.duration_s)


def intersect(video, music):
    """Elementwise AND of two timelines on the same grid."""
    if video.fps != music.fps or len(video.frames) != len(music.frames):
        raise DataError(
            f"timeline grids differ: fps {video.fps} vs {music.fps}, "
            f"len {len(video.frames)} vs {len(music.frames)}")
    return EventTimeline(video.fps, video.frames & music.frames, video.duration_s)


def match_count(a, b, tol_s):
    """One-to-one greedy matching count: sweep `a` ascending, consume the
    earliest unmatched element of `b` within +-tol_s.
    """
    if tol_s <= 0:
        raise DataError("tolerance must be positive")
    count = 0
    j = 0
    bt = b.times_s
    for x in a.times_s:
        while j < len(bt) and bt[j] < x - tol_s:
            j += 1
        if j < len(bt) and bt[j] <= x + tol_s:
            count += 1
            j += 1
    return count


def beats_iou(gt, syn, tol_s=DEFAULT_TOL_S):
    """Matched pairs over the union: m / (|gt| + |syn| - m).

    Both sets empty counts as perfect agreement (1.0); one empty set against
    a non-empty one scores 0.
    """
    if len(gt) == 0 and len(syn) == 0:
        return 1.0
    m = match_count(gt, syn, tol_s)
    return m / (len(gt) + len(syn) - m)


def transitions_beats_iou(tv, bm, tol_s=DEFAULT_TOL_S):
    """Same measure applied to video transitions vs music beats."""
    return beats_iou(tv, bm, tol_s)


def align_to_nearest_beat(transitions, beats):
    """Snap each transition to its nearest beat (ties to the earlier beat);
    result deduplicated and sorted.
    """
    if len(beats) == 0:
        raise DataError("cannot align to an empty beat set")
    bt = np.asarray(beats.times_s)
    out = []
    for t in transitions.times_s:
        i = int(np.searchsorted(bt, t))
        cands = [c for c in (i - 1, i) if 0 <= c < len(bt)]
        # min() keeps the first (earlier) candidate on distance ties
        best = min(cands, key=lambda c: abs(bt[c] - t))
        out.append(float(bt[best]))
    dedup = sorted(set(out))
    return TimestampSet(dedup, transitions.duration_s)


def f_measure(reference, estimate, tol_s=0.07):
    """Beat-tracking F-measure at the given tolerance (default 70 ms)."""
    if len(reference) == 0 and len(estimate) == 0:
        return 1.0
    if len(reference) == 0 or len(estimate) == 0:
        return 0.0
    m = match_count(reference, estimate, tol_s)
    precision = m / len(estimate)
    recall = m / len(reference)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


# -- JSON form -------------------------------------------------------------


def save_events_json(path, ts, fps=DEFAULT_FPS):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"fps": fps, "duration_s": ts.duration_s, "events": ts.times_s}, fh)


def load_events_json(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    for key in ("fps", "duration_s", "events"):
        if key not in doc:
            raise DataError(f"events file missing key {key!r}")
    return TimestampSet(sorted(doc["events"]), doc["duration_s"]), float(doc["fps"])
