"""Command-line entry point: ``vsynopsis {synopsize,track,evaluate,generate}``.

Exit status is 0 on success, 1 for usage errors and 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import logging
import shutil
import sys
import traceback
from dataclasses import fields
from pathlib import Path

from . import __version__

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

logger = logging.getLogger("vsynopsis")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _on_off(text: str) -> bool:
    value = text.strip().lower()
    if value in ("on", "true", "yes", "1"):
        return True
    if value in ("off", "false", "no", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


# (flag, RunConfig field, type, help); defaults come from RunConfig
_TUNABLES = [
    ("--cluster-size", "cluster_size", int, "CS: tubes stitched concurrently (required, >= 1)"),
    ("--collision", "collision", str, "overlap test: box or pixel"),
    ("--labels", "labels", _on_off, "draw start timestamps: on or off"),
    ("--fps", "fps", float, "override the source frame rate"),
    ("--bg-history", "bg_history", int, "background model history"),
    ("--bg-var-threshold", "bg_var_threshold", float, "match threshold in variances"),
    ("--bg-shadow-ratio", "bg_shadow_ratio", float, "lowest shadow brightness ratio"),
    ("--bg-kmax", "bg_kmax", int, "Gaussian components per pixel"),
    ("--bg-ratio", "bg_ratio", float, "background weight cutoff"),
    ("--morph-radius", "morph_radius", int, "structuring element radius"),
    ("--morph-iters", "morph_iters", int, "closing iterations"),
    ("--min-area", "min_area", float, "minimum blob area as a fraction of the frame"),
    ("--max-misses", "max_misses", int, "frames a confirmed track may coast"),
    ("--gate-factor", "gate_factor", float, "association gate in box diagonals"),
    ("--snapshot-interval", "snapshot_interval", int, "frames between background snapshots"),
    ("--threads", "threads", int, "worker threads"),
    ("--dump-masks", "dump_masks", Path, "write cleaned foreground masks (PGM) here"),
    ("--dump-tubes", "dump_tubes", Path, "write the tube archive here"),
]
_TUNABLE_TYPES = {dest: typ for _, dest, typ, _ in _TUNABLES}


def _add_tunables(parser: argparse.ArgumentParser, tracking_only: bool = False) -> None:
    group = parser.add_argument_group("pipeline parameters")
    for flag, dest, typ, text in _TUNABLES:
        if tracking_only and dest in ("cluster_size", "collision", "labels", "snapshot_interval", "dump_tubes"):
            continue
        kwargs = {"dest": dest, "type": typ, "default": None, "help": text}
        if dest == "collision":
            kwargs["choices"] = ("box", "pixel")
        if typ is Path:
            kwargs["metavar"] = "DIR"
        group.add_argument(flag, **kwargs)
    parser.add_argument("--config", type=Path, metavar="FILE", help="key=value parameter file")
    parser.add_argument("--dump-tracks", type=Path, metavar="FILE", help="write the track log here")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vsynopsis", description="Object-based video synopsis.")
    parser.add_argument("--version", action="version", version=f"vsynopsis {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synopsize", help="build a synopsis video")
    p.add_argument("input", type=Path, help="raster directory or .y4m file")
    p.add_argument("-o", "--output", type=Path, required=True, metavar="DIR", help="output directory")
    p.add_argument("--video-format", choices=("y4m", "ppm"), default="y4m", help="synopsis video container")
    _add_tunables(p)

    p = sub.add_parser("track", help="detect and track only")
    p.add_argument("input", type=Path, help="raster directory or .y4m file")
    p.add_argument("-o", "--output", type=Path, metavar="FILE", help="track log (same as --dump-tracks)")
    _add_tunables(p, tracking_only=True)

    p = sub.add_parser("evaluate", help="precision, recall and AP of a track log")
    p.add_argument("--gt", type=Path, required=True, metavar="FILE", help="ground-truth annotations")
    p.add_argument("--pred", type=Path, required=True, metavar="FILE", help="predicted track log")
    p.add_argument("--roi", type=Path, metavar="FILE", help="ROI polygon, one x,y vertex per row")
    p.add_argument("--iou", type=float, default=0.5, help="IoU threshold for a true positive")
    p.add_argument("--curve", type=Path, metavar="FILE", help="write the PR curve as CSV")

    p = sub.add_parser("generate", help="render a synthetic scene")
    p.add_argument("--spec", type=Path, required=True, metavar="FILE", help="scene description")
    p.add_argument("-o", "--output", type=Path, required=True, metavar="DIR", help="output directory")
    return parser


def read_config_file(path: Path) -> dict[str, str]:
    """``key = value`` lines; keys may use dashes or underscores."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.lstrip("-").replace("-", "_")] = value
    return values


def make_run_config(args: argparse.Namespace, require_cluster_size: bool = False):
    from .pipeline import RunConfig

    known = {f.name for f in fields(RunConfig)}
    options = {}
    if args.config is not None:
        for key, text in read_config_file(args.config).items():
            if key not in known or key not in _TUNABLE_TYPES:
                raise UsageError(f"{args.config}: unknown key {key!r}")
            try:
                options[key] = _TUNABLE_TYPES[key](text)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"{args.config}: bad value for {key}: {exc}") from None
    for dest in _TUNABLE_TYPES:
        value = getattr(args, dest, None)
        if value is not None:
            options[dest] = value
    if require_cluster_size and "cluster_size" not in options:
        raise UsageError("--cluster-size is required")
    if options.get("collision", "box") not in ("box", "pixel"):
        raise UsageError(f"collision must be box or pixel, got {options['collision']!r}")
    try:
        return RunConfig(**options)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


class _Outputs:
    """Remembers created paths so a failed run leaves nothing behind."""

    def __init__(self):
        self._created: list[Path] = []

    def claim(self, path: Path) -> Path:
        if not path.exists():
            self._created.append(path)
        return path

    def remove(self) -> None:
        for path in reversed(self._created):
            if path.is_dir():
                shutil.rmtree(path, ignore_errors=True)
            elif path.exists():
                path.unlink()


def _check_distinct(*paths) -> None:
    resolved = [p.resolve() for p in paths if p is not None]
    if len(set(resolved)) != len(resolved):
        raise UsageError("input and output paths must be distinct")


def cmd_synopsize(args, out: _Outputs) -> int:
    from .frame_io import open_frame_sink, open_frame_source
    from .pipeline import SynopsisPipeline, write_track_log

    config = make_run_config(args, require_cluster_size=True)
    _check_distinct(args.input, args.output, args.dump_tracks, config.dump_masks, config.dump_tubes)
    for path in (config.dump_masks, config.dump_tubes):
        if path is not None:
            out.claim(path)
    source = open_frame_source(args.input, fps=config.fps)
    meta = source.meta
    fps = config.fps if config.fps is not None else meta.fps
    out.claim(args.output)
    args.output.mkdir(parents=True, exist_ok=True)
    video = args.output / ("synopsis.y4m" if args.video_format == "y4m" else "synopsis")
    out.claim(video)
    with source, open_frame_sink(video, meta.width, meta.height, fps) as sink:
        result = SynopsisPipeline(config).run(source, sink)
    (out.claim(args.output / "schedule.csv")).write_text(_schedule_csv(result.schedule))
    (out.claim(args.output / "report.txt")).write_text(result.report())
    (out.claim(args.output / "timing.txt")).write_text(result.timing())
    if args.dump_tracks is not None:
        write_track_log(out.claim(args.dump_tracks), result.track_log)
    sys.stdout.write(result.report() + result.timing())
    return EXIT_OK


def _schedule_csv(entries) -> str:
    from .synopsis import schedule_to_csv

    return schedule_to_csv(entries)


def cmd_track(args, out: _Outputs) -> int:
    from .frame_io import open_frame_source
    from .pipeline import run_tracking, write_track_log

    target = args.output or args.dump_tracks
    if target is None:
        raise UsageError("track needs -o FILE or --dump-tracks FILE")
    config = make_run_config(args)
    _check_distinct(args.input, target, config.dump_masks)
    if config.dump_masks is not None:
        out.claim(config.dump_masks)
    with open_frame_source(args.input, fps=config.fps) as source:
        log, n_ids = run_tracking(source, config)
    write_track_log(out.claim(target), log)
    print(f"frames={log.n_frames}\nids={n_ids}")
    return EXIT_OK


def cmd_evaluate(args, out: _Outputs) -> int:
    from .metrics import (
        average_precision, evaluate, pr_curve, precision_recall, read_annotations, read_roi, write_pr_curve,
    )

    if not 0.0 < args.iou < 1.0:
        raise UsageError(f"--iou must be in (0, 1), got {args.iou}")
    gt = read_annotations(args.gt)
    pred = read_annotations(args.pred)
    roi = read_roi(args.roi) if args.roi is not None else None
    counts = evaluate(gt, pred, iou_threshold=args.iou, roi=roi)
    precision, recall = precision_recall(counts)
    ap = average_precision(precision, recall)
    if args.curve is not None:
        write_pr_curve(out.claim(args.curve), pr_curve(counts))
    print(f"precision={precision:.6f}\nrecall={recall:.6f}\nAP={ap:.6f}")
    return EXIT_OK


def cmd_generate(args, out: _Outputs) -> int:
    from .synthgen import SceneRenderer, load_scene

    spec = load_scene(args.spec)
    SceneRenderer(spec).write(out.claim(args.output))
    print(f"frames={spec.duration_frames}\nobjects={len(spec.objects)}")
    return EXIT_OK


_COMMANDS = {
    "synopsize": cmd_synopsize,
    "track": cmd_track,
    "evaluate": cmd_evaluate,
    "generate": cmd_generate,
}


def _module_tag(exc: BaseException) -> str:
    """Name of the innermost package module in the traceback."""
    tag = "cli"
    for frame in traceback.extract_tb(exc.__traceback__):
        path = Path(frame.filename)
        if path.parent == Path(__file__).parent:
            tag = path.stem
    return tag


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"{exc}\n{parser.format_usage().rstrip()}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    out = _Outputs()
    try:
        return _COMMANDS[args.command](args, out)
    except UsageError as exc:
        out.remove()
        print(f"vsynopsis: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        out.remove()
        print(f"vsynopsis: error [{_module_tag(exc)}]: {exc}", file=sys.stderr)
        if args.verbose:
            traceback.print_exc()
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
