"""Object tubes, the generated tube buffer and background snapshots."""

from __future__ import annotations

import bisect
import csv
import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .frame_io import read_pgm, read_ppm, write_pgm, write_ppm
from .geometry import Box
from .tracker import Track, TrackState


@dataclass(frozen=True, eq=False)
class ObjectFrame:
    source_frame: int
    timestamp_ms: float
    box: Box
    mask_crop: np.ndarray
    pixel_crop: np.ndarray


def format_timestamp(start_frame: int, fps: float) -> str:
    """``mm:ss`` of a source frame; minutes are not wrapped into hours."""
    seconds = int(math.floor(start_frame / fps + 1e-9))
    return f"{seconds // 60:02d}:{seconds % 60:02d}"


@dataclass(eq=False)
class Tube:
    id: int
    frames: list[ObjectFrame]
    label: str = ""
    snapshot: int | None = None

    def __post_init__(self):
        if not self.frames:
            raise ValueError("a tube needs at least one object frame")
        src = [of.source_frame for of in self.frames]
        if any(b <= a for a, b in zip(src, src[1:])):
            raise ValueError(f"tube {self.id}: source frames must strictly increase")

    @property
    def start_frame(self) -> int:
        return self.frames[0].source_frame

    @property
    def end_frame(self) -> int:
        return self.frames[-1].source_frame

    @property
    def key(self) -> tuple[int, int]:
        return (self.start_frame, self.id)

    def __len__(self) -> int:
        return len(self.frames)


def build_tube(track: Track, fps: float) -> Tube | None:
    """Package a finished, confirmed track; unconfirmed tracks yield ``None``."""
    if track.id is None:
        return None
    if track.state is not TrackState.TERMINATED:
        raise ValueError(f"track {track.id} is still live")
    frames = [
        ObjectFrame(
            source_frame=k,
            timestamp_ms=k * 1000.0 / fps,
            box=det.box,
            mask_crop=det.mask_crop,
            pixel_crop=det.pixel_crop,
        )
        for k, det in track.history
    ]
    return Tube(id=track.id, frames=frames, label=format_timestamp(frames[0].source_frame, fps))


class TubeBuffer:
    """Generated tube buffer: pops in ``(start_frame, id)`` order.

    With a ``watermark`` set, only tubes whose key is below it are poppable;
    the producer promises that no tube with a smaller key will be admitted
    later. Without a watermark (or after :meth:`close`) every tube is poppable.
    """

    def __init__(self):
        self._heap: list[tuple[tuple[int, int], Tube]] = []
        self._ids: set[int] = set()
        self.watermark: tuple | None = None
        self.closed = False

    def admit(self, tube: Tube) -> None:
        if tube.id in self._ids:
            raise ValueError(f"duplicate tube id {tube.id}")
        if self.watermark is not None and tube.key < self.watermark:
            raise ValueError(f"tube {tube.id} arrived behind the watermark {self.watermark}")
        self._ids.add(tube.id)
        heapq.heappush(self._heap, (tube.key, tube))

    def set_watermark(self, key: tuple) -> None:
        if self.watermark is not None and key < self.watermark:
            raise ValueError("watermark must not move backwards")
        self.watermark = key

    def close(self) -> None:
        self.closed = True

    def ready(self) -> bool:
        if not self._heap:
            return False
        if self.closed or self.watermark is None:
            return True
        return self._heap[0][0] < self.watermark

    def pop(self) -> Tube:
        if not self.ready():
            raise IndexError("no releasable tube")
        return heapq.heappop(self._heap)[1]

    @property
    def exhausted(self) -> bool:
        """No tube is buffered and none can arrive any more."""
        return self.closed and not self._heap

    def __len__(self) -> int:
        return len(self._heap)

    def __iter__(self):
        return (tube for _, tube in self._heap)


class SnapshotStore:
    """Background images recorded every ``interval`` source frames.

    Snapshots are taken at frames ``interval-1, 2*interval-1, ...``, or on
    demand when a tube needs one before the first scheduled snapshot.
    """

    def __init__(self, interval: int = 300):
        if interval < 1:
            raise ValueError("snapshot interval must be >= 1")
        self.interval = interval
        self._frames: list[int] = []
        self._images: dict[int, np.ndarray] = {}

    def due(self, frame_index: int) -> bool:
        return (frame_index + 1) % self.interval == 0

    def record(self, frame_index: int, image: np.ndarray) -> None:
        if self._frames and frame_index <= self._frames[-1]:
            return
        self._frames.append(frame_index)
        self._images[frame_index] = image

    def __len__(self) -> int:
        return len(self._frames)

    def nearest(self, frame_index: int) -> int:
        """Recorded snapshot frame closest to ``frame_index`` (earlier wins ties)."""
        if not self._frames:
            raise LookupError("no background snapshot recorded")
        pos = bisect.bisect_left(self._frames, frame_index)
        best = None
        for cand in self._frames[max(0, pos - 1) : pos + 1]:
            if best is None or abs(cand - frame_index) < abs(best - frame_index):
                best = cand
        return best

    def image(self, snapshot: int) -> np.ndarray:
        return self._images[snapshot]

    def prune(self, keep: set[int], horizon: int) -> None:
        """Drop snapshots not in ``keep`` that precede the last one at or before ``horizon``."""
        pos = bisect.bisect_right(self._frames, horizon) - 1
        if pos <= 0:
            return
        cutoff = self._frames[pos]
        survivors = [f for f in self._frames if f >= cutoff or f in keep]
        for f in self._frames:
            if f not in survivors:
                del self._images[f]
        self._frames = survivors


# --------------------------------------------------------------------------
# tube archive


MANIFEST_HEADER = ["tube_id", "of_index", "source_frame", "timestamp_ms", "x", "y", "w", "h", "label"]


def dump_tube(root, tube: Tube) -> None:
    """Write one tube under ``root/tube_%06d`` and append it to ``root/manifest.csv``."""
    root = Path(root)
    tdir = root / f"tube_{tube.id:06d}"
    tdir.mkdir(parents=True, exist_ok=True)
    manifest = root / "manifest.csv"
    new = not manifest.exists()
    with open(manifest, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(MANIFEST_HEADER)
        for k, of in enumerate(tube.frames):
            write_ppm(tdir / f"of_{k:06d}.ppm", of.pixel_crop)
            write_pgm(tdir / f"mask_{k:06d}.pgm", of.mask_crop)
            writer.writerow([tube.id, k, of.source_frame, f"{of.timestamp_ms:.3f}", *of.box, tube.label])


def load_tube_archive(root) -> list[Tube]:
    root = Path(root)
    rows: dict[int, list[dict]] = {}
    with open(root / "manifest.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(int(row["tube_id"]), []).append(row)
    tubes = []
    for tid, entries in rows.items():
        entries.sort(key=lambda r: int(r["of_index"]))
        tdir = root / f"tube_{tid:06d}"
        frames = []
        for r in entries:
            k = int(r["of_index"])
            frames.append(
                ObjectFrame(
                    source_frame=int(r["source_frame"]),
                    timestamp_ms=float(r["timestamp_ms"]),
                    box=Box(int(r["x"]), int(r["y"]), int(r["w"]), int(r["h"])),
                    mask_crop=read_pgm(tdir / f"mask_{k:06d}.pgm") > 0,
                    pixel_crop=read_ppm(tdir / f"of_{k:06d}.ppm"),
                )
            )
        tubes.append(Tube(id=tid, frames=frames, label=entries[0]["label"]))
    tubes.sort(key=lambda t: t.key)
    return tubes
