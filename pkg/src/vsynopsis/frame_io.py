"""Raster frame sources and sinks.

Two on-disk formats are supported:

* a directory of binary PPM (P6, maxval 255) files named ``frame_%06d.ppm``;
  any zero-padded numbered ``.ppm``/``.pgm`` files are accepted on input;
* a single uncompressed YUV4MPEG2 stream with 4:2:0 chroma.

YUV <-> RGB conversion uses the BT.601 limited-range integer approximation.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterator

import numba
import numpy as np

DEFAULT_FPS = 18.0
FRAME_PATTERN = "frame_{:06d}.ppm"

_NUMBERED = re.compile(r"(\d+)\.(ppm|pgm)$", re.IGNORECASE)


class FrameIOError(Exception):
    """Raised for unreadable, garbled or inconsistent raster input."""


class FrameDecodeError(FrameIOError):
    def __init__(self, index: int, reason: str):
        super().__init__(f"frame {index}: {reason}")
        self.index = index


@dataclass(frozen=True)
class VideoMeta:
    fps: float
    total_frames: int
    width: int
    height: int

    def __post_init__(self):
        if not self.fps > 0:
            raise ValueError(f"fps must be > 0, got {self.fps}")
        if self.total_frames < 0:
            raise ValueError("total_frames must be >= 0")


@dataclass(frozen=True)
class Frame:
    """One RGB raster; ``pixels`` is a read-only ``(height, width, 3)`` uint8 array."""

    pixels: np.ndarray
    index: int
    timestamp_ms: float = field(default=0.0)

    def __post_init__(self):
        px = self.pixels
        if px.dtype != np.uint8 or px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"pixels must be (H, W, 3) uint8, got {px.dtype} {px.shape}")
        if px.flags.writeable:
            px = px.copy()
            px.flags.writeable = False
            object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def from_array(cls, pixels: np.ndarray, index: int, fps: float = DEFAULT_FPS) -> "Frame":
        return cls(pixels, index, index * 1000.0 / fps)


# --------------------------------------------------------------------------
# Netpbm


def _read_netpbm_header(data: bytes) -> tuple[bytes, int, int, int, int]:
    tokens: list[bytes] = []
    pos = 0
    n = len(data)
    while len(tokens) < 4:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FrameIOError("truncated netpbm header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    magic = tokens[0]
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FrameIOError(f"garbled netpbm header: {exc}") from None
    return magic, width, height, maxval, pos


def decode_netpbm(data: bytes) -> np.ndarray:
    """Decode a binary P6 or P5 image into an ``(H, W, 3)`` uint8 array."""
    magic, width, height, maxval, offset = _read_netpbm_header(data)
    if magic not in (b"P6", b"P5"):
        raise FrameIOError(f"unsupported netpbm magic {magic!r}")
    if maxval != 255:
        raise FrameIOError(f"only maxval 255 is supported, got {maxval}")
    channels = 3 if magic == b"P6" else 1
    expected = width * height * channels
    raster = data[offset : offset + expected]
    if len(raster) != expected:
        raise FrameIOError(f"truncated raster: expected {expected} bytes, got {len(raster)}")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    if channels == 1:
        arr = np.repeat(arr, 3, axis=2)
    return arr


def read_ppm(path) -> np.ndarray:
    return decode_netpbm(Path(path).read_bytes())


def write_ppm(path, pixels: np.ndarray) -> None:
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    h, w = pixels.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(pixels.tobytes())


def write_pgm(path, image: np.ndarray) -> None:
    """Write a 2-D array as binary PGM; boolean/0-1 masks are scaled to 0/255."""
    image = np.asarray(image)
    if image.dtype == bool or image.max(initial=0) <= 1:
        image = image.astype(np.uint8) * 255
    image = np.ascontiguousarray(image, dtype=np.uint8)
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    return decode_netpbm(Path(path).read_bytes())[:, :, 0].copy()


# --------------------------------------------------------------------------
# BT.601 limited range, 16-bit fixed point


# coefficients of the 8-bit form scaled by 2**16 and rounded
_KY = (16829, 33039, 6416)
_KU = (-9714, -19070, 28784)
_KV = (28784, -24103, -4681)
_KINV_Y = 76309
_KINV_RV = 104597
_KINV_GU = -25675
_KINV_GV = -53279
_KINV_BU = 132201
_HALF = 1 << 15


@numba.njit(cache=True, nogil=True, inline="always")
def _clip8(v):
    return 0 if v < 0 else (255 if v > 255 else v)


@numba.njit(cache=True, nogil=True)
def _rgb_to_yuv(rgb, y, u, v):
    h, w = y.shape
    for i in range(h):
        for j in range(w):
            r = np.int64(rgb[i, j, 0])
            g = np.int64(rgb[i, j, 1])
            b = np.int64(rgb[i, j, 2])
            y[i, j] = ((_KY[0] * r + _KY[1] * g + _KY[2] * b + _HALF) >> 16) + 16
            u[i, j] = ((_KU[0] * r + _KU[1] * g + _KU[2] * b + _HALF) >> 16) + 128
            v[i, j] = ((_KV[0] * r + _KV[1] * g + _KV[2] * b + _HALF) >> 16) + 128


@numba.njit(cache=True, nogil=True)
def _yuv_to_rgb(y, u, v, sub, out):
    # sub is the chroma subsampling shift: 0 for 4:4:4, 1 for 4:2:0
    h, w = y.shape
    for i in range(h):
        ci = i >> sub
        for j in range(w):
            cj = j >> sub
            c = _KINV_Y * (np.int64(y[i, j]) - 16) + _HALF
            d = np.int64(u[ci, cj]) - 128
            e = np.int64(v[ci, cj]) - 128
            out[i, j, 0] = _clip8((c + _KINV_RV * e) >> 16)
            out[i, j, 1] = _clip8((c + _KINV_GU * d + _KINV_GV * e) >> 16)
            out[i, j, 2] = _clip8((c + _KINV_BU * d) >> 16)


@numba.njit(cache=True, nogil=True)
def _subsample(plane):
    h, w = plane.shape
    ch = (h + 1) // 2
    cw = (w + 1) // 2
    out = np.empty((ch, cw), dtype=np.uint8)
    for i in range(ch):
        i0 = 2 * i
        i1 = min(2 * i + 1, h - 1)
        for j in range(cw):
            j0 = 2 * j
            j1 = min(2 * j + 1, w - 1)
            s = (np.int32(plane[i0, j0]) + np.int32(plane[i1, j0])
                 + np.int32(plane[i0, j1]) + np.int32(plane[i1, j1]))
            out[i, j] = (s + 2) >> 2
    return out


def rgb_to_yuv444(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    planes = [np.empty(rgb.shape[:2], dtype=np.uint8) for _ in range(3)]
    _rgb_to_yuv(rgb, *planes)
    return tuple(planes)


def yuv444_to_rgb(y: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = np.empty(y.shape + (3,), dtype=np.uint8)
    _yuv_to_rgb(y, u, v, 0, out)
    return out


def rgb_to_yuv420(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Chroma is the rounded mean of each 2x2 block (edge pixels replicated)."""
    y, u, v = rgb_to_yuv444(rgb)
    return y, _subsample(u), _subsample(v)


def yuv420_to_rgb(y: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Chroma is upsampled by replication."""
    out = np.empty(y.shape + (3,), dtype=np.uint8)
    _yuv_to_rgb(y, u, v, 1, out)
    return out


# --------------------------------------------------------------------------
# Sources


class FrameSource:
    """Single-consumer iterator of :class:`Frame` objects in index order."""

    meta: VideoMeta

    def __init__(self):
        self._next = 0
        self._done = False

    def read_frame(self) -> Frame | None:
        """Return the next frame, or ``None`` at end of stream (idempotent)."""
        if self._done or self._next >= self.meta.total_frames:
            self._done = True
            return None
        pixels = self._decode(self._next)
        frame = Frame(pixels, self._next, self._next * 1000.0 / self.meta.fps)
        self._next += 1
        return frame

    def _decode(self, index: int) -> np.ndarray:
        raise NotImplementedError

    def __iter__(self) -> Iterator[Frame]:
        while True:
            frame = self.read_frame()
            if frame is None:
                return
            yield frame

    def close(self) -> None:
        self._done = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class RasterDirectorySource(FrameSource):
    def __init__(self, directory, fps: float = DEFAULT_FPS):
        super().__init__()
        directory = Path(directory)
        numbered = []
        for name in os.listdir(directory):
            m = _NUMBERED.search(name)
            if m:
                numbered.append((int(m.group(1)), name))
        numbered.sort()
        self._paths = [directory / name for _, name in numbered]
        width = height = 0
        if self._paths:
            try:
                first = read_ppm(self._paths[0])
            except FrameIOError as exc:
                raise FrameDecodeError(0, str(exc)) from None
            height, width = first.shape[:2]
        self.meta = VideoMeta(fps=fps, total_frames=len(self._paths), width=width, height=height)

    def _decode(self, index: int) -> np.ndarray:
        try:
            pixels = read_ppm(self._paths[index])
        except (OSError, FrameIOError) as exc:
            self._done = True
            raise FrameDecodeError(index, str(exc)) from None
        if pixels.shape[:2] != (self.meta.height, self.meta.width):
            self._done = True
            raise FrameDecodeError(
                index,
                f"dimensions {pixels.shape[1]}x{pixels.shape[0]} differ from "
                f"{self.meta.width}x{self.meta.height}",
            )
        return pixels


class ArraySource(FrameSource):
    """In-memory frames, mainly for tests and benchmarks."""

    def __init__(self, frames, fps: float = DEFAULT_FPS):
        super().__init__()
        self._frames = [np.asarray(f, dtype=np.uint8) for f in frames]
        h, w = self._frames[0].shape[:2] if self._frames else (0, 0)
        self.meta = VideoMeta(fps=fps, total_frames=len(self._frames), width=w, height=h)

    def _decode(self, index: int) -> np.ndarray:
        pixels = self._frames[index]
        if pixels.shape != (self.meta.height, self.meta.width, 3):
            self._done = True
            raise FrameDecodeError(index, f"shape {pixels.shape} differs from the first frame")
        return pixels


def parse_y4m_header(line: bytes) -> dict:
    parts = line.strip().split(b" ")
    if not parts or parts[0] != b"YUV4MPEG2":
        raise FrameIOError("missing YUV4MPEG2 signature")
    fields = {"C": "420jpeg", "F": "18:1"}
    for token in parts[1:]:
        if not token:
            continue
        fields[chr(token[0])] = token[1:].decode("ascii", "replace")
    try:
        width = int(fields["W"])
        height = int(fields["H"])
        num, den = (int(x) for x in fields["F"].split(":"))
    except (KeyError, ValueError) as exc:
        raise FrameIOError(f"garbled YUV4MPEG2 header: {exc}") from None
    if not fields["C"].startswith("420"):
        raise FrameIOError(f"unsupported chroma mode C{fields['C']}")
    if width <= 0 or height <= 0 or num <= 0 or den <= 0:
        raise FrameIOError("non-positive dimension or frame rate in header")
    return {"width": width, "height": height, "fps": num / den}


class Y4MSource(FrameSource):
    def __init__(self, path, fps: float | None = None):
        super().__init__()
        self._fh = open(path, "rb")
        header = self._fh.readline(4096)
        if not header.endswith(b"\n"):
            self._fh.close()
            raise FrameIOError(f"{path}: unterminated YUV4MPEG2 header")
        try:
            info = parse_y4m_header(header)
        except FrameIOError:
            self._fh.close()
            raise
        w, h = info["width"], info["height"]
        cw, ch = (w + 1) // 2, (h + 1) // 2
        self._plane_sizes = (w * h, cw * ch, cw * ch)
        self._frame_bytes = sum(self._plane_sizes)
        self._offsets = self._scan(len(header))
        self.meta = VideoMeta(
            fps=fps if fps is not None else info["fps"],
            total_frames=len(self._offsets),
            width=w,
            height=h,
        )

    def _scan(self, start: int) -> list[int]:
        size = os.fstat(self._fh.fileno()).st_size
        body = size - start
        step = len(b"FRAME\n") + self._frame_bytes
        if body % step == 0:
            # fast path: plain FRAME markers; verified lazily per frame
            return [start + k * step for k in range(body // step)]
        offsets = []
        pos = start
        self._fh.seek(pos)
        while pos < size:
            marker = self._fh.readline(4096)
            if not marker.startswith(b"FRAME"):
                raise FrameDecodeError(len(offsets), "missing FRAME marker")
            offsets.append(pos)
            pos += len(marker) + self._frame_bytes
            if pos > size:
                raise FrameDecodeError(len(offsets) - 1, "truncated frame data")
            self._fh.seek(pos)
        return offsets

    def _decode(self, index: int) -> np.ndarray:
        self._fh.seek(self._offsets[index])
        marker = self._fh.readline(4096)
        if not marker.startswith(b"FRAME"):
            self._done = True
            raise FrameDecodeError(index, "missing FRAME marker")
        raw = self._fh.read(self._frame_bytes)
        if len(raw) != self._frame_bytes:
            self._done = True
            raise FrameDecodeError(index, "truncated frame data")
        w, h = self.meta.width, self.meta.height
        cw, ch = (w + 1) // 2, (h + 1) // 2
        buf = np.frombuffer(raw, dtype=np.uint8)
        ys, us, _ = self._plane_sizes
        y = buf[:ys].reshape(h, w)
        u = buf[ys : ys + us].reshape(ch, cw)
        v = buf[ys + us :].reshape(ch, cw)
        return yuv420_to_rgb(y, u, v)

    def close(self) -> None:
        super().close()
        self._fh.close()


def open_frame_source(path, meta_override: VideoMeta | None = None, fps: float | None = None) -> FrameSource:
    """Open a raster directory or a ``.y4m`` file as a :class:`FrameSource`.

    ``fps`` (or ``meta_override.fps``) sets the frame rate; directories default
    to 18 fps, YUV4MPEG2 streams to the rate in their header.
    """
    path = Path(path)
    if meta_override is not None and fps is None:
        fps = meta_override.fps
    if not path.exists():
        raise FileNotFoundError(f"no such input: {path}")
    if path.is_dir():
        return RasterDirectorySource(path, fps=fps if fps is not None else DEFAULT_FPS)
    return Y4MSource(path, fps=fps)


# --------------------------------------------------------------------------
# Sinks


class FrameSink:
    def __init__(self, width: int, height: int):
        self.width = width
        self.height = height
        self.frames_written = 0
        self._closed = False

    def write_frame(self, frame: Frame | np.ndarray) -> None:
        if self._closed:
            raise FrameIOError("write to closed sink")
        pixels = frame.pixels if isinstance(frame, Frame) else np.asarray(frame)
        if pixels.shape != (self.height, self.width, 3):
            raise ValueError(
                f"frame shape {pixels.shape} does not match sink {self.height}x{self.width}x3"
            )
        self._write(pixels)
        self.frames_written += 1

    def _write(self, pixels: np.ndarray) -> None:
        raise NotImplementedError

    def close(self) -> None:
        self._closed = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class RasterDirectorySink(FrameSink):
    def __init__(self, directory, width: int, height: int):
        super().__init__(width, height)
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _write(self, pixels: np.ndarray) -> None:
        write_ppm(self.directory / FRAME_PATTERN.format(self.frames_written), pixels)


class Y4MSink(FrameSink):
    def __init__(self, path, width: int, height: int, fps: float = DEFAULT_FPS):
        super().__init__(width, height)
        rate = Fraction(fps).limit_denominator(1001)
        self._fh = open(path, "wb")
        self._fh.write(
            b"YUV4MPEG2 W%d H%d F%d:%d Ip A1:1 C420jpeg\n"
            % (width, height, rate.numerator, rate.denominator)
        )

    def _write(self, pixels: np.ndarray) -> None:
        y, u, v = rgb_to_yuv420(pixels)
        self._fh.write(b"FRAME\n")
        self._fh.write(y.tobytes())
        self._fh.write(u.tobytes())
        self._fh.write(v.tobytes())

    def close(self) -> None:
        if not self._closed:
            self._fh.close()
        super().close()


def open_frame_sink(path, width: int, height: int, fps: float = DEFAULT_FPS) -> FrameSink:
    """A ``.y4m`` path opens a stream sink; anything else a raster directory."""
    path = Path(path)
    if path.suffix.lower() == ".y4m":
        return Y4MSink(path, width, height, fps)
    return RasterDirectorySink(path, width, height)
