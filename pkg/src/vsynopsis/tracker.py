"""Multi-object tracking with a recency-weighted displacement predictor.

Predicted displacement for a track whose box centres are ``C[1..i]``:

* ``i <= 10``: ``D = sum_{n=1}^{i-1} (C[n+1]-C[n]) * n / sum_{n=1}^{i-1} n``
* ``i > 10``:  ``D = sum_{n=1}^{9} (C[i+1-n]-C[i-n]) * (10-n) / 45``

and the predicted centre of the next frame is ``P = C[i] + D``. Tracks get an
identity only after ``confirm_frames`` consecutive detections.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from sklearn.base import BaseEstimator

from ._validation import check_positive_float, check_positive_int
from .segmentation import Detection


class TrackState(enum.Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    TERMINATED = "terminated"


def predict_displacement(centers) -> tuple[float, float]:
    i = len(centers)
    if i < 2:
        return (0.0, 0.0)
    sx = sy = 0.0
    if i <= 10:
        for n in range(1, i):
            (ax, ay), (bx, by) = centers[n - 1], centers[n]
            sx += (bx - ax) * n
            sy += (by - ay) * n
        norm = i * (i - 1) / 2
    else:
        for n in range(1, 10):
            (ax, ay), (bx, by) = centers[i - n - 1], centers[i - n]
            sx += (bx - ax) * (10 - n)
            sy += (by - ay) * (10 - n)
        norm = 45
    return (sx / norm, sy / norm)


@dataclass(eq=False)
class Track:
    serial: int
    first_frame: int
    history: list[tuple[int, Detection]] = field(default_factory=list)
    centers: list[tuple[float, float]] = field(default_factory=list)
    state: TrackState = TrackState.TENTATIVE
    id: int | None = None
    misses: int = 0

    def append(self, frame_index: int, detection: Detection) -> None:
        self.history.append((frame_index, detection))
        self.centers.append(detection.centroid)
        self.misses = 0

    @property
    def last_box(self):
        return self.history[-1][1].box


def predict_center(track: Track) -> tuple[float, float]:
    """``C[i] + D[i]``, advanced once more per coasted frame."""
    if not track.centers:
        raise ValueError("cannot predict an empty track")
    cx, cy = track.centers[-1]
    dx, dy = predict_displacement(track.centers)
    steps = 1 + track.misses
    return (cx + dx * steps, cy + dy * steps)


def associate(tracks, detections, gate_factor: float = 1.0):
    """Globally greedy nearest-pair matching within a size-scaled gate.

    Returns ``(pairs, unmatched_tracks, unmatched_detections)`` where ``pairs``
    is a list of ``(track_pos, detection_pos)`` in pick order.
    """
    candidates = []
    for ti, track in enumerate(tracks):
        px, py = predict_center(track)
        gate = gate_factor * track.last_box.diagonal
        for di, det in enumerate(detections):
            cx, cy = det.centroid
            dist = math.hypot(cx - px, cy - py)
            if dist <= gate:
                candidates.append((dist, ti, di))
    candidates.sort()
    used_t: set[int] = set()
    used_d: set[int] = set()
    pairs = []
    for _, ti, di in candidates:
        if ti in used_t or di in used_d:
            continue
        used_t.add(ti)
        used_d.add(di)
        pairs.append((ti, di))
    unmatched_t = [ti for ti in range(len(tracks)) if ti not in used_t]
    unmatched_d = [di for di in range(len(detections)) if di not in used_d]
    return pairs, unmatched_t, unmatched_d


@dataclass
class TrackEvents:
    frame_index: int
    confirmed: list[Track] = field(default_factory=list)
    appended: list[Track] = field(default_factory=list)
    terminated: list[Track] = field(default_factory=list)


class ObjectTracker(BaseEstimator):
    """Greedy centre tracker with a consecutive-frame confirmation rule.

    Parameters
    ----------
    fps : float
        Source frame rate; ``confirm_frames`` defaults to ``round(fps)``.
    confirm_seconds : float
        Continuous detection time needed for an identity.
    max_misses : int
        Frames a confirmed track may coast without a detection.
    gate_factor : float
        Association gate in multiples of the track's last box diagonal.
    """

    def __init__(self, fps=18.0, confirm_seconds=1.0, max_misses=5, gate_factor=1.0):
        self.fps = fps
        self.confirm_seconds = confirm_seconds
        self.max_misses = max_misses
        self.gate_factor = gate_factor

    @property
    def confirm_frames(self) -> int:
        return max(1, int(round(self.fps * self.confirm_seconds)))

    def reset(self) -> "ObjectTracker":
        check_positive_float(self.fps, "fps")
        check_positive_float(self.gate_factor, "gate_factor")
        check_positive_int(self.max_misses, "max_misses", minimum=0)
        self.tracks_: list[Track] = []
        self.next_id_ = 1
        self.next_serial_ = 0
        self.last_frame_: int | None = None
        return self

    def partial_fit(self, detections, frame_index: int) -> TrackEvents:
        """Advance one frame; returns the track events it produced."""
        if not hasattr(self, "tracks_"):
            self.reset()
        if self.last_frame_ is not None and frame_index <= self.last_frame_:
            raise ValueError(
                f"frame_index {frame_index} not after previous frame {self.last_frame_}"
            )
        self.last_frame_ = frame_index
        events = TrackEvents(frame_index)
        live = self.tracks_
        pairs, unmatched_t, unmatched_d = associate(live, detections, self.gate_factor)

        for ti, di in pairs:
            track = live[ti]
            track.append(frame_index, detections[di])
            events.appended.append(track)
            if track.state is TrackState.TENTATIVE and len(track.history) >= self.confirm_frames:
                track.state = TrackState.CONFIRMED
                track.id = self.next_id_
                self.next_id_ += 1
                events.confirmed.append(track)

        for ti in unmatched_t:
            track = live[ti]
            track.misses += 1
            if track.state is TrackState.TENTATIVE or track.misses > self.max_misses:
                events.terminated.append(track)

        for di in unmatched_d:
            track = Track(serial=self.next_serial_, first_frame=frame_index)
            self.next_serial_ += 1
            track.append(frame_index, detections[di])
            if self.confirm_frames <= 1:
                track.state = TrackState.CONFIRMED
                track.id = self.next_id_
                self.next_id_ += 1
                events.confirmed.append(track)
            live.append(track)

        if events.terminated:
            dead = set(map(id, events.terminated))
            for track in events.terminated:
                track.state = TrackState.TERMINATED
            self.tracks_ = [t for t in live if id(t) not in dead]
        return events

    def finish(self) -> list[Track]:
        """Terminate every live track (end of stream)."""
        if not hasattr(self, "tracks_"):
            self.reset()
        ended = self.tracks_
        for track in ended:
            track.state = TrackState.TERMINATED
        self.tracks_ = []
        return ended

    def fit(self, detection_stream, y=None):
        """Track a whole sequence of per-frame detection lists.

        Sets ``completed_`` to every confirmed track, in confirmation order.
        """
        self.reset()
        completed = []
        for k, detections in enumerate(detection_stream):
            events = self.partial_fit(detections, k)
            completed.extend(t for t in events.terminated if t.id is not None)
        completed.extend(t for t in self.finish() if t.id is not None)
        completed.sort(key=lambda t: t.id)
        self.completed_ = completed
        return self

    def live_watermark(self) -> tuple:
        """Lower bound on the ``(first_frame, id)`` key of any tube still to come.

        Unconfirmed tracks can only receive ids from ``next_id_`` upwards.
        """
        if not hasattr(self, "tracks_"):
            self.reset()
        keys = [
            (t.first_frame, t.id if t.id is not None else self.next_id_) for t in self.tracks_
        ]
        start = self.last_frame_ + 1 if self.last_frame_ is not None else 0
        return min(keys + [(start, self.next_id_)])
