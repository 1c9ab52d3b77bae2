"""Deterministic synthetic scenes: solid rectangles over a flat or gradient background.

Scene description files are ``key = value`` lines; ``#`` starts a comment::

    width = 320
    height = 240
    fps = 18
    frames = 200
    background = 90,90,90                   # flat colour
    # background = gradient 40,40,40 160,160,160   (top to bottom)
    noise_sigma = 2
    seed = 7
    object = id=1 color=200,40,40 size=40x30 path=20:60,100;150:260,100

An object is visible from its first to its last waypoint frame; its centre is
interpolated linearly between waypoints and its box top-left is the centre
minus half the size, rounded half up.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .frame_io import FRAME_PATTERN, write_ppm
from .geometry import Box
from .metrics import AnnotationSet, write_annotations


class SceneSpecError(ValueError):
    pass


@dataclass(frozen=True)
class SceneObject:
    id: int
    color: tuple[int, int, int]
    size: tuple[int, int]
    waypoints: tuple[tuple[int, tuple[float, float]], ...]

    @property
    def entry_frame(self) -> int:
        return self.waypoints[0][0]

    @property
    def exit_frame(self) -> int:
        return self.waypoints[-1][0]

    def center_at(self, k: int) -> tuple[float, float] | None:
        if not self.entry_frame <= k <= self.exit_frame:
            return None
        wps = self.waypoints
        for (f0, c0), (f1, c1) in zip(wps, wps[1:]):
            if f0 <= k <= f1:
                t = (k - f0) / (f1 - f0)
                return (c0[0] + t * (c1[0] - c0[0]), c0[1] + t * (c1[1] - c0[1]))
        return wps[0][1]

    def box_at(self, k: int) -> Box | None:
        c = self.center_at(k)
        if c is None:
            return None
        w, h = self.size
        return Box(math.floor(c[0] - w / 2 + 0.5), math.floor(c[1] - h / 2 + 0.5), w, h)


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    fps: float = 18.0
    duration_frames: int = 100
    background: tuple = ("flat", (90, 90, 90))
    objects: tuple[SceneObject, ...] = field(default_factory=tuple)
    noise_sigma: float = 0.0
    seed: int = 0

    def validate(self) -> "SceneSpec":
        if self.width <= 0 or self.height <= 0:
            raise SceneSpecError("width and height must be positive")
        if not self.fps > 0:
            raise SceneSpecError("fps must be positive")
        if self.duration_frames < 0:
            raise SceneSpecError("frames must be >= 0")
        if self.noise_sigma < 0:
            raise SceneSpecError("noise_sigma must be >= 0")
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise SceneSpecError("object ids must be unique")
        for o in self.objects:
            if not o.waypoints:
                raise SceneSpecError(f"object {o.id} has no waypoints")
            frames = [f for f, _ in o.waypoints]
            if any(b <= a for a, b in zip(frames, frames[1:])):
                raise SceneSpecError(f"object {o.id}: waypoint frames must increase")
            if o.size[0] <= 0 or o.size[1] <= 0:
                raise SceneSpecError(f"object {o.id}: size must be positive")
            for f in frames:
                b = o.box_at(f)
                if b.x < 0 or b.y < 0 or b.x + b.w > self.width or b.y + b.h > self.height:
                    raise SceneSpecError(f"object {o.id} leaves the frame at waypoint {f}")
        return self


def _parse_triplet(text: str) -> tuple[int, int, int]:
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise SceneSpecError(f"bad colour {text!r}") from None
    if len(vals) != 3 or not all(0 <= v <= 255 for v in vals):
        raise SceneSpecError(f"bad colour {text!r}")
    return vals


def _parse_object(text: str) -> SceneObject:
    fields = {}
    for token in text.split():
        if "=" not in token:
            raise SceneSpecError(f"bad object field {token!r}")
        k, v = token.split("=", 1)
        fields[k.strip()] = v.strip()
    try:
        w, h = (int(v) for v in fields["size"].lower().split("x"))
        waypoints = []
        for wp in fields["path"].split(";"):
            f, c = wp.split(":")
            x, y = (float(v) for v in c.split(","))
            waypoints.append((int(f), (x, y)))
        return SceneObject(
            id=int(fields["id"]),
            color=_parse_triplet(fields["color"]),
            size=(w, h),
            waypoints=tuple(waypoints),
        )
    except (KeyError, ValueError) as exc:
        raise SceneSpecError(f"bad object description {text!r}: {exc}") from None


def parse_scene(text: str) -> SceneSpec:
    values: dict[str, str] = {}
    objects = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SceneSpecError(f"line {lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        if key == "object":
            objects.append(_parse_object(value))
        else:
            values[key] = value
    try:
        bg_text = values.get("background", "90,90,90").split()
        if bg_text[0] == "gradient":
            background = ("gradient", _parse_triplet(bg_text[1]), _parse_triplet(bg_text[2]))
        else:
            background = ("flat", _parse_triplet(bg_text[0]))
        spec = SceneSpec(
            width=int(values["width"]),
            height=int(values["height"]),
            fps=float(values.get("fps", 18)),
            duration_frames=int(values.get("frames", 100)),
            background=background,
            objects=tuple(objects),
            noise_sigma=float(values.get("noise_sigma", 0)),
            seed=int(values.get("seed", 0)),
        )
    except (KeyError, IndexError, ValueError) as exc:
        raise SceneSpecError(f"bad scene description: {exc}") from None
    return spec.validate()


def load_scene(path) -> SceneSpec:
    return parse_scene(Path(path).read_text())


class SceneRenderer:
    """Renders frames of a :class:`SceneSpec`; ``frame(k)`` depends only on ``k``."""

    def __init__(self, spec: SceneSpec):
        self.spec = spec.validate()
        self._background = self._make_background()

    def _make_background(self) -> np.ndarray:
        spec = self.spec
        kind = spec.background[0]
        if kind == "flat":
            bg = np.empty((spec.height, spec.width, 3), dtype=np.float64)
            bg[:] = spec.background[1]
        elif kind == "gradient":
            top = np.asarray(spec.background[1], dtype=np.float64)
            bottom = np.asarray(spec.background[2], dtype=np.float64)
            t = np.linspace(0.0, 1.0, spec.height)[:, None, None]
            bg = np.broadcast_to(top + t * (bottom - top), (spec.height, spec.width, 3)).copy()
        else:
            raise SceneSpecError(f"unknown background kind {kind!r}")
        return np.rint(bg)

    def frame(self, k: int) -> np.ndarray:
        spec = self.spec
        img = self._background.copy()
        for obj in spec.objects:
            box = obj.box_at(k)
            if box is not None:
                rows, cols = box.slices
                img[rows, cols] = obj.color
        if spec.noise_sigma > 0:
            rng = np.random.default_rng([spec.seed, k])
            img += rng.normal(0.0, spec.noise_sigma, img.shape)
        return np.clip(np.rint(img), 0, 255).astype(np.uint8)

    def frames(self):
        for k in range(self.spec.duration_frames):
            yield self.frame(k)

    def annotations(self) -> AnnotationSet:
        ann = AnnotationSet(n_frames=self.spec.duration_frames)
        for obj in self.spec.objects:
            for k in range(max(obj.entry_frame, 0), min(obj.exit_frame + 1, self.spec.duration_frames)):
                ann.add(k, obj.id, obj.box_at(k))
        return ann

    def tube_manifest(self) -> list[tuple[int, int, int, int]]:
        """``(object_id, start_frame, end_frame, length)`` clipped to the video."""
        rows = []
        for obj in self.spec.objects:
            start = max(obj.entry_frame, 0)
            end = min(obj.exit_frame, self.spec.duration_frames - 1)
            if end >= start:
                rows.append((obj.id, start, end, end - start + 1))
        rows.sort(key=lambda r: (r[1], r[0]))
        return rows

    def write(self, output_dir) -> Path:
        """Write ``frames/``, ``annotations.txt`` and ``tubes.csv`` under ``output_dir``."""
        out = Path(output_dir)
        frames_dir = out / "frames"
        frames_dir.mkdir(parents=True, exist_ok=True)
        for k, img in enumerate(self.frames()):
            write_ppm(frames_dir / FRAME_PATTERN.format(k), img)
        write_annotations(out / "annotations.txt", self.annotations())
        with open(out / "tubes.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["object_id", "start_frame", "end_frame", "length"])
            writer.writerows(self.tube_manifest())
        return out


def render(spec: SceneSpec):
    """``(frames, annotations, tube_manifest)`` with ``frames`` as a list of arrays."""
    r = SceneRenderer(spec)
    return list(r.frames()), r.annotations(), r.tube_manifest()
