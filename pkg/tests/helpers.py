"""Builders for synthetic tubes, scenes and streaming runs shared by the tests."""

from __future__ import annotations

import numpy as np

from vsynopsis.geometry import Box
from vsynopsis.synopsis import TubeScheduler, schedule_to_csv
from vsynopsis.synthgen import parse_scene
from vsynopsis.tubes import ObjectFrame, Tube


def make_tube(tube_id: int, start: int, boxes, snapshot: int | None = 0) -> Tube:
    frames = []
    for k, b in enumerate(boxes):
        box = Box(*b)
        frames.append(
            ObjectFrame(
                source_frame=start + k,
                timestamp_ms=(start + k) * 1000.0 / 18.0,
                box=box,
                mask_crop=np.ones((box.h, box.w), dtype=bool),
                pixel_crop=np.full((box.h, box.w, 3), 200, dtype=np.uint8),
            )
        )
    return Tube(id=tube_id, frames=frames, label="00:00", snapshot=snapshot)


def as_plain(tubes) -> list:
    """Package tubes -> the oracle's ``(id, [(source_frame, box), ...])`` form."""
    return [(t.id, [(of.source_frame, tuple(of.box)) for of in t.frames]) for t in tubes]


def random_tube_set(rng: np.random.Generator, max_tubes=40, max_len=200, width=320, height=240,
                    horizon=600):
    """Random linear-motion tubes; ids follow ``start + confirm`` order like the tracker."""
    n = int(rng.integers(1, max_tubes + 1))
    specs = []
    for serial in range(n):
        length = int(rng.integers(1, max_len + 1))
        start = int(rng.integers(0, horizon))
        w = int(rng.integers(4, 60))
        h = int(rng.integers(4, 60))
        x0, y0 = rng.uniform(0, width - w), rng.uniform(0, height - h)
        x1, y1 = rng.uniform(0, width - w), rng.uniform(0, height - h)
        boxes = []
        for k in range(length):
            t = k / max(length - 1, 1)
            boxes.append((int(round(x0 + t * (x1 - x0))), int(round(y0 + t * (y1 - y0))), w, h))
        specs.append((start, serial, boxes))
    confirm = int(rng.integers(1, 20))
    # ids handed out in confirmation order, ties by creation order
    specs.sort(key=lambda s: (s[0] + min(confirm, len(s[2])) - 1, s[1]))
    tubes = [make_tube(i + 1, start, boxes) for i, (start, _, boxes) in enumerate(specs)]
    confirm_at = {t.id: t.start_frame + min(confirm, len(t)) - 1 for t in tubes}
    return tubes, confirm_at


def stream_schedule(tubes, confirm_at, cluster_size: int, rng: np.random.Generator,
                    collision="box") -> tuple[str, int]:
    """Feed tubes to the streaming scheduler as a tracker would.

    A tube is admitted some random coasting delay after its last frame. After
    each source frame the watermark is the smallest key any tube still to be
    admitted could have, computed only from what a tracker knows at that time.
    """
    delay = {t.id: int(rng.integers(1, 7)) for t in tubes}
    admit_at: dict[int, list[Tube]] = {}
    for t in tubes:
        admit_at.setdefault(t.end_frame + delay[t.id], []).append(t)
    horizon = max(admit_at) + 1
    sched = TubeScheduler(cluster_size=cluster_size, collision=collision)
    shape = (400, 400) if collision == "pixel" else None
    sched.reset(frame_shape=shape)
    pending = {t.id: t for t in tubes}
    for now in range(horizon):
        for t in sorted(admit_at.get(now, []), key=lambda t: t.id):
            sched.admit(t)
            del pending[t.id]
        next_id = 1 + sum(1 for c in confirm_at.values() if c <= now)
        keys = [(now + 1, next_id)]
        for t in pending.values():
            if t.start_frame <= now:
                known = t.id if confirm_at[t.id] <= now else next_id
                keys.append((t.start_frame, known))
        sched.set_watermark(min(keys))
        for _ in sched.frames(render=False):
            pass
    sched.close()
    for _ in sched.frames(render=False):
        pass
    return schedule_to_csv(sched.schedule_), sched.n_frames_


def lane_scene(width, height, frames, n_objects, seed=0, noise=2.0, size=(30, 24), start_gap=25,
               span=(150, 300), warmup=30):
    """Horizontal lanes, one object per lane, staggered entries."""
    rng = np.random.default_rng(seed)
    lines = [f"width = {width}", f"height = {height}", "fps = 18", f"frames = {frames}",
             "background = gradient 60,70,80 150,150,140", f"noise_sigma = {noise}", f"seed = {seed}"]
    lane = height // n_objects
    w, h = size
    for i in range(n_objects):
        cy = lane * i + lane // 2
        start = warmup + i * start_gap
        end = min(start + int(rng.integers(*span)), frames - 1)
        x0, x1 = w, width - w
        if i % 2:
            x0, x1 = x1, x0
        color = f"{200 - 12 * i},{40 + 15 * i},{(90 + 40 * i) % 256}"
        lines.append(f"object = id={i + 1} color={color} size={w}x{h} path={start}:{x0},{cy};{end}:{x1},{cy}")
    return parse_scene("\n".join(lines))
