"""Command line interface.

Subcommands:
  run       process a frame sequence with one tracking variant
  simulate  render a synthetic sensor sequence to a directory
  layout    generate and validate a marker layout file

``run`` accepts frames from a written sequence directory, a raw stream file
with a sidecar header, stdin (``--input -``, header preamble followed by
frame bytes), or one of the built-in scenario presets (``fig4:keyline``,
``fig4:solid``, ``idle``, ``indent``, ``shear``) rendered in memory.
Deviation records go to ``--output`` as text CSV or fixed-width binary; with
``--bench`` a latency/count report is written next to the output stream as
text, JSON, and a rendered figure.
"""

from __future__ import annotations

import argparse
import itertools
import sys
from dataclasses import replace
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, TextIO

from . import io as kio
from .bench import bench_latency
from .errors import KeytrackError, StreamFormatError
from .layout import (
    MarkerGeometry,
    MarkerLayout,
    MarkerStyle,
    canonical_layout,
    load_layout,
    save_layout,
    validate_layout,
)
from .pipeline import GrayFrame, PipelineConfig
from .runner import Mode, VariantRunner
from .simulate import (
    Scenario,
    render_frame,
    scenario_fig4,
    scenario_idle,
    scenario_radial_indent,
    scenario_uniform_shear,
    write_sequence,
)
from .tracker import DEFAULT_GATE_FRACTION, NoiseParams

_PRESET_NAMES = ("fig4:keyline", "fig4:solid", "idle", "indent", "shear")
_SIM_PRESETS = {name.replace(":", "-"): name for name in _PRESET_NAMES}


def make_preset(spec: str, frames: int | None = None, seed: int | None = None) -> Scenario:
    """Build one of the canned scenarios, optionally resized or reseeded."""
    kwargs = {}
    if frames is not None:
        kwargs["n_frames"] = frames
    if seed is not None:
        kwargs["seed"] = seed
    if spec.startswith("fig4:"):
        style = MarkerStyle(spec.split(":", 1)[1])
        return scenario_fig4(style, **kwargs)
    factory = {
        "idle": scenario_idle,
        "indent": scenario_radial_indent,
        "shear": scenario_uniform_shear,
    }[spec]
    return factory(**kwargs)


class _RecordSink:
    """Writes deviation records to a file or stdout, text or binary."""

    def __init__(self, output: str, fmt: str) -> None:
        self.fmt = fmt
        self.to_stdout = output == "-"
        self._text: TextIO | None = None
        self._bin: BinaryIO | None = None
        if fmt == "text":
            self._text = sys.stdout if self.to_stdout else open(output, "w", encoding="utf-8")
            self._text.write(kio.TEXT_STREAM_HEADER + "\n")
        else:
            self._bin = sys.stdout.buffer if self.to_stdout else open(output, "wb")
            kio.write_binary_stream_header(self._bin)

    def write(self, records) -> None:
        if self._text is not None:
            for rec in records:
                self._text.write(kio.format_record_text(rec) + "\n")
            if self.to_stdout:
                self._text.flush()
        else:
            self._bin.write(b"".join(kio.pack_record(rec) for rec in records))
            if self.to_stdout:
                self._bin.flush()

    def close(self) -> None:
        stream = self._text if self._text is not None else self._bin
        stream.flush()
        if not self.to_stdout:
            stream.close()


def _scenario_frames(scenario: Scenario) -> Iterator[GrayFrame]:
    for index in range(scenario.n_frames):
        yield render_frame(scenario, index)[0]


def _dir_frames(files: list[Path], fps: float) -> Iterator[GrayFrame]:
    for index, path in enumerate(files):
        yield kio.gray_from_u8(kio.read_image(path), timestamp=index / fps)


def _resolve_input(args) -> tuple[MarkerLayout, Iterable[GrayFrame]]:
    """Turn --input/--layout into (layout, frame iterable)."""
    spec = args.input
    if spec in _PRESET_NAMES:
        if args.layout is not None:
            raise StreamFormatError("--layout cannot be combined with a preset input")
        if args.frames == 0:
            return make_preset(spec, seed=args.seed).layout, iter(())
        scenario = make_preset(spec, frames=args.frames, seed=args.seed)
        return scenario.layout, _scenario_frames(scenario)

    if spec == "-":
        if args.layout is None:
            raise StreamFormatError("--input - requires --layout")
        header = kio.read_stream_preamble(sys.stdin.buffer)
        return load_layout(args.layout), kio.iter_raw_stream(sys.stdin.buffer, header)

    path = Path(spec)
    if path.is_dir():
        try:
            manifest = kio.read_manifest(path)
            layout = load_layout(args.layout) if args.layout else manifest.load_layout()
            files = [manifest.frame_path(i) for i in range(manifest.n_frames)]
            missing = [p for p in files if not p.is_file()]
            if missing:
                raise StreamFormatError(f"{path}: missing frame file {missing[0].name}")
            fps = manifest.fps
        except StreamFormatError:
            if not (path / kio.MANIFEST_NAME).is_file():
                if args.layout is None:
                    raise StreamFormatError(
                        f"{path}: no manifest; provide --layout for bare image directories"
                    ) from None
                layout = load_layout(args.layout)
                files = kio.list_frame_files(path)
                if not files:
                    raise StreamFormatError(f"{path}: no numbered .pgm/.ppm frames") from None
                fps = args.fps
            else:
                raise
        return layout, _dir_frames(files, fps)

    if path.is_file() and path.suffix == ".raw":
        if args.layout is None:
            raise StreamFormatError("raw stream inputs require --layout")
        return load_layout(args.layout), kio.iter_raw_frames(path)

    raise StreamFormatError(
        f"--input {spec!r} is not a preset, directory, .raw file, or '-'"
    )


def _build_runner(args, layout: MarkerLayout) -> VariantRunner:
    pipeline = PipelineConfig.for_layout(layout, tau=args.tau)
    if args.area_min is not None or args.area_max is not None:
        pipeline = PipelineConfig(
            tau=args.tau,
            area_min=args.area_min if args.area_min is not None else pipeline.area_min,
            area_max=args.area_max if args.area_max is not None else pipeline.area_max,
        )
    noise = NoiseParams(sigma_w=args.sigma_w, sigma_v=args.sigma_v)
    return VariantRunner(
        Mode(args.mode), layout, pipeline,
        noise=noise, gate_radius_px=args.gate, p0=args.p0,
    )


def _cmd_run(args) -> int:
    if args.frames is not None and args.frames < 0:
        raise StreamFormatError(f"--frames must be >= 0, got {args.frames}")
    layout, frames = _resolve_input(args)
    runner = _build_runner(args, layout)

    if args.frames is not None and args.input not in _PRESET_NAMES:
        frames = itertools.islice(frames, args.frames)

    if args.bench and args.output == "-":
        raise StreamFormatError("--bench needs a file --output to place the report next to")

    sink = _RecordSink(args.output, args.format)
    try:
        if args.bench:
            frames = list(frames)  # decode everything up front; timing excludes I/O
            report = bench_latency(runner, frames, warmup=args.warmup,
                                   on_result=lambda res: sink.write(res.records))
        else:
            report = None
            if args.input != "-":  # stdin is strictly request/response, no read-ahead
                frames = kio.prefetch(frames)
            for frame in frames:
                sink.write(runner.process(frame).records)
    finally:
        sink.close()

    if report is not None:
        base = Path(args.output)
        stem = base.parent / base.stem
        Path(f"{stem}_bench.txt").write_text(report.to_text(), encoding="utf-8")
        report.write_json(f"{stem}_bench.json")
        report.save_figure(f"{stem}_bench.png", n_markers=layout.n_markers)
        sys.stdout.write(report.to_text())
    return 0


def _cmd_simulate(args) -> int:
    scenario = make_preset(_SIM_PRESETS[args.preset], frames=args.frames, seed=args.seed)
    if args.noise_std is not None:
        scenario = replace(scenario, noise_std=args.noise_std)
    if args.blur is not None:
        scenario = replace(scenario, blur_px=args.blur)

    manifest = write_sequence(scenario, args.out)
    print(f"wrote {manifest.n_frames} frames to {manifest.directory} "
          f"(layout {manifest.layout_file}, truth {manifest.truth_file})")
    return 0


def _cmd_layout(args) -> int:
    geometry = MarkerGeometry() if args.style == "keyline" else MarkerGeometry.solid()
    if args.origin is None:
        span_x = (args.cols - 1) * args.spacing_mm * args.px_per_mm
        span_y = (args.rows - 1) * args.spacing_mm * args.px_per_mm
        origin = ((args.sensor_mm[0] * args.px_per_mm - span_x) / 2.0,
                  (args.sensor_mm[1] * args.px_per_mm - span_y) / 2.0)
    else:
        origin = tuple(args.origin)
    layout = canonical_layout(
        args.rows, args.cols, spacing_mm=args.spacing_mm, px_per_mm=args.px_per_mm,
        origin_px=origin, geometry=geometry,
        sensor_size_mm=tuple(args.sensor_mm),
    )
    gate = args.gate if args.gate is not None else DEFAULT_GATE_FRACTION * layout.spacing_px
    report = validate_layout(layout, layout.frame_size_px, gate)
    for check in report.checks:
        print(f"{'PASS' if check.passed else 'FAIL'} {check.name}: {check.detail}")
    if args.out:
        save_layout(layout, args.out)
        print(f"wrote {layout.n_markers}-marker layout to {args.out}")
    return 0 if report.ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="keytrack",
        description="Marker tracking for see-through-skin tactile sensors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="track markers through a frame sequence")
    run.add_argument("--mode", choices=[m.value for m in Mode],
                     default=Mode.KEYLINE_FILTERED.value)
    run.add_argument("--input", required=True,
                     help="sequence directory, .raw file, '-' (stdin), or preset "
                          f"({', '.join(_PRESET_NAMES)})")
    run.add_argument("--layout", help="layout file (required for raw/stdin/bare-dir inputs)")
    run.add_argument("--tau", type=float, default=PipelineConfig().tau,
                     help="dark threshold intensity in (0, 1)")
    run.add_argument("--area-min", type=float, default=None, help="blob area gate lower bound (px^2)")
    run.add_argument("--area-max", type=float, default=None, help="blob area gate upper bound (px^2)")
    run.add_argument("--sigma-w", type=float, default=NoiseParams().sigma_w,
                     help="process noise std (px)")
    run.add_argument("--sigma-v", type=float, default=NoiseParams().sigma_v,
                     help="measurement noise std (px)")
    run.add_argument("--gate", type=float, default=None,
                     help="association gate radius (px); default 0.45 * pitch")
    run.add_argument("--p0", type=float, default=None,
                     help="initial position variance (px^2); default sigma_v^2")
    run.add_argument("--output", default="-", help="record stream path, or '-' for stdout")
    run.add_argument("--format", choices=["text", "binary"], default="text")
    run.add_argument("--bench", action="store_true", help="collect latency/count report")
    run.add_argument("--warmup", type=int, default=10, help="frames excluded from latency stats")
    run.add_argument("--frames", type=int, default=None, help="process at most N frames")
    run.add_argument("--seed", type=int, default=None, help="seed override for preset inputs")
    run.add_argument("--fps", type=float, default=120.0,
                     help="timestamp rate for bare image directories")
    run.set_defaults(func=_cmd_run)

    sim = sub.add_parser("simulate", help="render a synthetic sequence to a directory")
    sim.add_argument("--preset", choices=sorted(_SIM_PRESETS), default="fig4-keyline")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--frames", type=int, default=None)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--noise-std", type=float, default=None)
    sim.add_argument("--blur", type=float, default=None)
    sim.set_defaults(func=_cmd_simulate)

    lay = sub.add_parser("layout", help="generate and validate a marker layout file")
    lay.add_argument("--rows", type=int, default=8)
    lay.add_argument("--cols", type=int, default=8)
    lay.add_argument("--spacing-mm", type=float, default=3.5)
    lay.add_argument("--px-per-mm", type=float, default=10.0)
    lay.add_argument("--sensor-mm", type=float, nargs=2, default=[40.0, 40.0],
                     metavar=("W", "H"))
    lay.add_argument("--origin", type=float, nargs=2, default=None, metavar=("X", "Y"),
                     help="grid origin in px; default centers the grid")
    lay.add_argument("--style", choices=["keyline", "solid"], default="keyline")
    lay.add_argument("--gate", type=float, default=None,
                     help="gate radius used for the ambiguity check")
    lay.add_argument("--out", default=None, help="write the layout file here")
    lay.set_defaults(func=_cmd_layout)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeytrackError as exc:
        print(f"keytrack: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"keytrack: i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
