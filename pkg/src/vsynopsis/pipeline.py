"""End-to-end synopsis pipeline.

Stages: read -> background model + segmentation -> tracking -> tube building
-> streaming scheduler -> compositing -> sink. With ``threads > 1`` reading and
detection run in a worker thread behind a bounded queue; every later stage
consumes frames strictly in order, so output does not depend on timing.
"""

from __future__ import annotations

import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .background import BackgroundSubtractor, set_num_threads
from .frame_io import FrameSink, FrameSource, write_pgm
from .metrics import AnnotationSet, frame_reduction_rate, write_annotations
from .segmentation import ObjectDetector
from .synopsis import ScheduleEntry, TubeScheduler
from .tracker import ObjectTracker
from .tubes import SnapshotStore, Tube, build_tube, dump_tube

logger = logging.getLogger(__name__)

_END = object()


@dataclass
class RunConfig:
    cluster_size: int = 10
    fps: float | None = None
    bg_history: int = 100
    bg_var_threshold: float = 25.0
    bg_shadow_ratio: float = 0.5
    bg_kmax: int = 5
    bg_ratio: float = 0.75
    morph_radius: int = 1
    morph_iters: int = 2
    min_area: float = 0.0002
    max_misses: int = 5
    gate_factor: float = 1.0
    snapshot_interval: int = 300
    collision: str = "box"
    labels: bool = True
    threads: int = 1
    queue_size: int = 8
    dump_masks: Path | None = None
    dump_tubes: Path | None = None

    def __post_init__(self):
        if self.cluster_size < 1:
            raise ValueError("cluster size must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass
class RunResult:
    tov: int
    tsv: int
    fps: float
    width: int
    height: int
    cluster_size: int
    n_tubes: int
    peak_tubes: int
    elapsed: float
    schedule: list[ScheduleEntry] = field(default_factory=list)
    tubes: list[Tube] = field(default_factory=list)
    track_log: AnnotationSet | None = None

    @property
    def frr(self) -> float:
        return frame_reduction_rate(self.tsv, self.tov) if self.tov else 0.0

    @property
    def achieved_fps(self) -> float:
        return self.tov / self.elapsed if self.elapsed > 0 else 0.0

    def report(self) -> str:
        """Deterministic key=value summary (timing is reported separately)."""
        lines = [
            f"CS={self.cluster_size}",
            f"TOV={self.tov}",
            f"TSV={self.tsv}",
            f"FRR={self.frr:.6f}",
            f"tubes={self.n_tubes}",
            f"peak_tubes={self.peak_tubes}",
            f"source_fps={self.fps:g}",
            f"width={self.width}",
            f"height={self.height}",
        ]
        return "\n".join(lines) + "\n"

    def timing(self) -> str:
        return f"elapsed_s={self.elapsed:.3f}\nFPS={self.achieved_fps:.2f}\n"


class DetectionStage:
    """Background model, segmentation and background snapshots for one stream."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.model = BackgroundSubtractor(
            history=config.bg_history,
            var_threshold=config.bg_var_threshold,
            shadow_ratio=config.bg_shadow_ratio,
            n_components_max=config.bg_kmax,
            background_ratio=config.bg_ratio,
        )
        self.detector = ObjectDetector(
            morph_radius=config.morph_radius,
            morph_iters=config.morph_iters,
            min_area_fraction=config.min_area,
        )
        self.snapshot_interval = config.snapshot_interval
        self._have_snapshot = False
        if config.dump_masks is not None:
            Path(config.dump_masks).mkdir(parents=True, exist_ok=True)

    def __call__(self, frame):
        labels = self.model.apply(frame.pixels)
        closed = self.detector.clean_mask(labels)
        if self.config.dump_masks is not None:
            write_pgm(Path(self.config.dump_masks) / f"mask_{frame.index:06d}.pgm", closed)
        detections = self.detector.detect_from_mask(frame.pixels, closed)
        snapshot = provisional = None
        if (frame.index + 1) % self.snapshot_interval == 0:
            snapshot = self.model.background_image()
            self._have_snapshot = True
        elif not self._have_snapshot:
            # stand-in for tubes that finish before the first regular snapshot
            provisional = self.model.background_image()
        return frame, detections, snapshot, provisional


def _detect_worker(source: FrameSource, stage: DetectionStage, out: queue.Queue, stop: threading.Event):
    try:
        for frame in source:
            if stop.is_set():
                return
            out.put(stage(frame))
        out.put(_END)
    except BaseException as exc:  # handed to the consumer thread
        out.put(exc)


def _detections(source: FrameSource, stage: DetectionStage, config: RunConfig):
    if config.threads <= 1:
        for frame in source:
            yield stage(frame)
        return
    q: queue.Queue = queue.Queue(maxsize=config.queue_size)
    stop = threading.Event()
    worker = threading.Thread(target=_detect_worker, args=(source, stage, q, stop), daemon=True)
    worker.start()
    try:
        while True:
            item = q.get()
            if item is _END:
                return
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop.set()
        while worker.is_alive():
            try:
                q.get_nowait()
            except queue.Empty:
                worker.join(timeout=0.05)


class SynopsisPipeline:
    """Detect, track, build tubes and stitch the synopsis of one source."""

    def __init__(self, config: RunConfig):
        self.config = config

    def run(
        self,
        source: FrameSource,
        sink: FrameSink | None = None,
        schedule_only: bool = False,
        keep_tubes: bool = False,
    ) -> RunResult:
        """Process ``source`` to completion.

        Tubes are released once scheduled unless ``keep_tubes`` is set.
        """
        cfg = self.config
        meta = source.meta
        fps = cfg.fps if cfg.fps is not None else meta.fps
        set_num_threads(cfg.threads)
        stage = DetectionStage(cfg)
        tracker = ObjectTracker(fps=fps, max_misses=cfg.max_misses, gate_factor=cfg.gate_factor)
        tracker.reset()
        snapshots = SnapshotStore(cfg.snapshot_interval)
        scheduler = TubeScheduler(cluster_size=cfg.cluster_size, collision=cfg.collision, labels=cfg.labels)
        render = sink is not None and not schedule_only
        scheduler.reset(
            frame_shape=(meta.height, meta.width),
            background=snapshots.image if render else None,
        )
        if cfg.dump_tubes is not None:
            Path(cfg.dump_tubes).mkdir(parents=True, exist_ok=True)

        provisional = None
        kept: list[Tube] = []
        log = AnnotationSet()
        n_tubes = 0
        t0 = time.perf_counter()
        tov = 0

        def admit(tracks, frame_index):
            nonlocal n_tubes
            for track in tracks:
                tube = build_tube(track, fps)
                if tube is None:
                    continue
                if not len(snapshots):
                    snapshots.record(frame_index, provisional)
                tube.snapshot = snapshots.nearest(tube.start_frame)
                scheduler.admit(tube)
                n_tubes += 1
                for of in tube.frames:
                    log.add(of.source_frame, tube.id, of.box)
                if keep_tubes:
                    kept.append(tube)
                if cfg.dump_tubes is not None:
                    dump_tube(cfg.dump_tubes, tube)

        def drain():
            for syn in scheduler.frames(render=render):
                if render:
                    sink.write_frame(syn.pixels)

        for frame, detections, snapshot, prov in _detections(source, stage, cfg):
            tov += 1
            if snapshot is not None:
                snapshots.record(frame.index, snapshot)
            if prov is not None:
                provisional = prov
            events = tracker.partial_fit(detections, frame.index)
            admit(events.terminated, frame.index)
            watermark = tracker.live_watermark()
            scheduler.set_watermark(watermark)
            drain()
            pending = {s.tube.snapshot for s in scheduler.ctb_.slots}
            pending.update(t.snapshot for t in scheduler.gtb_)
            snapshots.prune(pending, watermark[0])

        admit(tracker.finish(), max(tov - 1, 0))
        scheduler.close()
        drain()
        elapsed = time.perf_counter() - t0

        log.n_frames = tov
        logger.info("processed %d frames into %d synopsis frames", tov, scheduler.n_frames_)
        return RunResult(
            tov=tov,
            tsv=scheduler.n_frames_,
            fps=fps,
            width=meta.width,
            height=meta.height,
            cluster_size=cfg.cluster_size,
            n_tubes=n_tubes,
            peak_tubes=scheduler.peak_tubes_,
            elapsed=elapsed,
            schedule=scheduler.schedule_,
            tubes=kept,
            track_log=log,
        )


def write_track_log(path, log: AnnotationSet) -> None:
    write_annotations(path, log)


def run_tracking(source: FrameSource, config: RunConfig) -> tuple[AnnotationSet, int]:
    """Detection and tracking only; returns the confirmed-track log and its id count."""
    fps = config.fps if config.fps is not None else source.meta.fps
    set_num_threads(config.threads)
    stage = DetectionStage(config)
    tracker = ObjectTracker(fps=fps, max_misses=config.max_misses, gate_factor=config.gate_factor)
    tracker.reset()
    log = AnnotationSet()
    ids = set()

    def record(tracks):
        for track in tracks:
            if track.id is None:
                continue
            ids.add(track.id)
            for k, det in track.history:
                log.add(k, track.id, det.box)

    tov = 0
    for frame, detections, _, _ in _detections(source, stage, config):
        tov += 1
        record(tracker.partial_fit(detections, frame.index).terminated)
    record(tracker.finish())
    log.n_frames = tov
    return log, len(ids)
