"""Greedy collision-free tube rearrangement.

Each synopsis frame scans the cluster buffer (at most ``cluster_size`` tubes,
admitted first-in first-out from the generated tube buffer) in admission
order. A tube's next object frame is placed when it does not overlap anything
already placed in that frame; otherwise it waits for the next frame. Tubes
whose object frames are all placed leave the cluster and free a slot.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive_int
from .geometry import Box, boxes_collide
from .overlay import draw_label
from .tubes import ObjectFrame, Tube, TubeBuffer

SCHEDULE_HEADER = ["tube_id", "of_index", "synopsis_frame", "x", "y", "w", "h", "source_frame"]
COLLISION_MODES = ("box", "pixel")


@dataclass(frozen=True)
class ScheduleEntry:
    tube_id: int
    of_index: int
    synopsis_frame: int
    box: Box
    source_frame: int

    def row(self) -> list[int]:
        return [self.tube_id, self.of_index, self.synopsis_frame, *self.box, self.source_frame]


@dataclass
class ClusterSlot:
    tube: Tube
    cursor: int = 0

    @property
    def current(self) -> ObjectFrame:
        return self.tube.frames[self.cursor]


class ClusterBuffer:
    def __init__(self, capacity: int):
        self.capacity = check_positive_int(capacity, "cluster_size")
        self.slots: list[ClusterSlot] = []

    def __len__(self) -> int:
        return len(self.slots)

    @property
    def full(self) -> bool:
        return len(self.slots) >= self.capacity


@dataclass
class SynopsisFrame:
    index: int
    placements: list[tuple[Tube, int, ObjectFrame]] = field(default_factory=list)
    snapshot: int | None = None
    pixels: np.ndarray | None = None

    @property
    def boxes(self) -> list[Box]:
        return [of.box for _, _, of in self.placements]


def refill_cluster(ctb: ClusterBuffer, gtb: TubeBuffer) -> int:
    """Move releasable tubes from the GTB into the cluster until it is full."""
    moved = 0
    while not ctb.full and gtb.ready():
        ctb.slots.append(ClusterSlot(gtb.pop()))
        moved += 1
    return moved


def _mask_collides(of: ObjectFrame, occupancy: np.ndarray) -> bool:
    rows, cols = of.box.slices
    return bool(np.any(occupancy[rows, cols] & of.mask_crop))


def place_frame(
    ctb: ClusterBuffer, n: int, collision: str = "box", frame_shape=None
) -> SynopsisFrame:
    """One scan over the cluster: place every non-colliding next object frame.

    Cursors of placed tubes advance; finished tubes are removed afterwards.
    """
    if collision not in COLLISION_MODES:
        raise ValueError(f"collision must be one of {COLLISION_MODES}, got {collision!r}")
    frame = SynopsisFrame(index=n)
    if ctb.slots:
        frame.snapshot = ctb.slots[0].tube.snapshot
    placed: list[Box] = []
    occupancy = None
    if collision == "pixel":
        if frame_shape is None:
            raise ValueError("pixel collision needs frame_shape")
        occupancy = np.zeros(frame_shape[:2], dtype=bool)
    for slot in ctb.slots:
        of = slot.current
        if occupancy is None:
            if any(boxes_collide(of.box, b) for b in placed):
                continue
            placed.append(of.box)
        else:
            if _mask_collides(of, occupancy):
                continue
            rows, cols = of.box.slices
            occupancy[rows, cols] |= of.mask_crop
        frame.placements.append((slot.tube, slot.cursor, of))
        slot.cursor += 1
    ctb.slots = [s for s in ctb.slots if s.cursor < len(s.tube.frames)]
    return frame


def render_frame(background: np.ndarray, frame: SynopsisFrame, labels: bool = True) -> np.ndarray:
    """Paste each placement's masked pixels at its source position, then labels."""
    out = np.array(background, dtype=np.uint8, copy=True)
    for _, _, of in frame.placements:
        rows, cols = of.box.slices
        region = out[rows, cols]
        region[of.mask_crop] = of.pixel_crop[of.mask_crop]
    if labels:
        for tube, _, of in frame.placements:
            draw_label(out, of.box, tube.label)
    return out


def compose_frame(ctb, background, n, collision="box", labels=True):
    """Place and render synopsis frame ``n``; returns ``(frame, entries)``."""
    shape = None if background is None else np.asarray(background).shape
    frame = place_frame(ctb, n, collision, shape)
    if background is not None:
        frame.pixels = render_frame(background, frame, labels)
    return frame, entries_of(frame)


def entries_of(frame: SynopsisFrame) -> list[ScheduleEntry]:
    return [
        ScheduleEntry(tube.id, k, frame.index, of.box, of.source_frame)
        for tube, k, of in frame.placements
    ]


def schedule_to_csv(entries: Iterable[ScheduleEntry]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SCHEDULE_HEADER)
    for e in entries:
        writer.writerow(e.row())
    return buf.getvalue()


def read_schedule_csv(path) -> list[ScheduleEntry]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != SCHEDULE_HEADER:
            raise ValueError(f"unexpected schedule header {header}")
        return [
            ScheduleEntry(int(r[0]), int(r[1]), int(r[2]), Box(*map(int, r[3:7])), int(r[7]))
            for r in reader
        ]


class TubeScheduler(BaseEstimator):
    """Streaming synopsis scheduler.

    Tubes are pushed with :meth:`admit` as they complete. A frame is only
    composed once the cluster is full or no further tube can arrive, so the
    emitted schedule is the same as running over the complete tube set.

    Parameters
    ----------
    cluster_size : int
        Maximum number of tubes stitched concurrently.
    collision : {"box", "pixel"}
        Overlap test granularity.
    labels : bool
        Draw each placed tube's start timestamp.
    """

    def __init__(self, cluster_size=10, collision="box", labels=True):
        self.cluster_size = cluster_size
        self.collision = collision
        self.labels = labels

    def reset(self, frame_shape=None, background: Callable | np.ndarray | None = None):
        check_positive_int(self.cluster_size, "cluster_size")
        if self.collision not in COLLISION_MODES:
            raise ValueError(f"collision must be one of {COLLISION_MODES}")
        self.gtb_ = TubeBuffer()
        self.ctb_ = ClusterBuffer(self.cluster_size)
        self.frame_shape_ = frame_shape
        self._background = background
        self.n_frames_ = 0
        self.peak_tubes_ = 0
        self.n_tubes_ = 0
        self.schedule_: list[ScheduleEntry] = []
        return self

    def _track_peak(self):
        self.peak_tubes_ = max(self.peak_tubes_, len(self.gtb_) + len(self.ctb_))

    def admit(self, tube: Tube) -> None:
        self.gtb_.admit(tube)
        self.n_tubes_ += 1
        self._track_peak()

    def set_watermark(self, key) -> None:
        self.gtb_.set_watermark(key)

    def close(self) -> None:
        self.gtb_.close()

    def _can_step(self) -> bool:
        refill_cluster(self.ctb_, self.gtb_)
        self._track_peak()
        if not self.ctb_.slots:
            return False
        return self.ctb_.full or self.gtb_.exhausted

    def _background_for(self, frame: SynopsisFrame):
        bg = self._background
        if bg is None:
            return None
        if callable(bg):
            return bg(frame.snapshot)
        return bg

    def frames(self, render: bool = True) -> Iterator[SynopsisFrame]:
        """Compose every frame that is determinable with the tubes seen so far."""
        while self._can_step():
            frame = place_frame(self.ctb_, self.n_frames_, self.collision, self.frame_shape_)
            self.n_frames_ += 1
            if render:
                bg = self._background_for(frame)
                if bg is not None:
                    frame.pixels = render_frame(bg, frame, self.labels)
            self.schedule_.extend(entries_of(frame))
            yield frame

    @property
    def done(self) -> bool:
        return self.gtb_.exhausted and not self.ctb_.slots

    def fit(self, tubes: Iterable[Tube], y=None, frame_shape=None):
        """Schedule a complete tube set (no rendering)."""
        tubes = list(tubes)
        if frame_shape is None and self.collision == "pixel" and tubes:
            frame_shape = (
                max(of.box.y + of.box.h for t in tubes for of in t.frames),
                max(of.box.x + of.box.w for t in tubes for of in t.frames),
            )
        self.reset(frame_shape=frame_shape)
        for tube in tubes:
            self.admit(tube)
        self.close()
        for _ in self.frames(render=False):
            pass
        return self

    @property
    def n_synopsis_frames_(self) -> int:
        check_is_fitted(self, "schedule_")
        return self.n_frames_

    def schedule_csv(self) -> str:
        check_is_fitted(self, "schedule_")
        return schedule_to_csv(self.schedule_)


def run_synopsis(tubes, cluster_size, collision="box") -> tuple[list[ScheduleEntry], int]:
    """Schedule a finished tube set; returns ``(entries, TSV)``."""
    sched = TubeScheduler(cluster_size=cluster_size, collision=collision).fit(tubes)
    return sched.schedule_, sched.n_frames_
