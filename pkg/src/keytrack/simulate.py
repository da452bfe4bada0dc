"""Synthetic sensor frames with exact ground truth.

Renders marker arrays over configurable clutter so the pipeline and tracker
can be tested against known displacements. Everything is deterministic:
(scenario, seed, frame_index) fully determine the frame bytes, and frames
for different indices can render in parallel because per-frame randomness
is seeded by (seed, frame_index) alone.

Rendering order: background layers, then markers (outer circle first so the
inner circle sits on top), then Gaussian blur, then additive clipped
Gaussian noise, then quantization to the 8-bit grid. Blur precedes noise
because defocus happens before the sensor adds shot noise. Marker disks are
drawn with coverage-weighted (anti-aliased) edges so subpixel ground truth
is meaningful.

Clutter textures (text-like glyphs, blob distractors) are generated per
400 px tile of an infinite pattern plane, seeded by tile index, and the
whole plane slides by ``background_drift`` px per frame. That is how a
scene "moves past" the sensor.
"""

from __future__ import annotations

import functools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ScenarioInvalid
from .layout import (
    DeviationField,
    MarkerLayout,
    MarkerStyle,
    Provenance,
    default_layout,
    save_layout,
)
from .pipeline import GrayFrame

_TILE_PX = 400
_TILE_OFFSET = 2 ** 31  # shifts tile indices into SeedSequence's non-negative range

DEFAULT_FPS = 120.0
DEFAULT_BLUR_PX = 0.7
DEFAULT_NOISE_STD = 0.02


# --------------------------------------------------------------------------
# Background layers


@dataclass(frozen=True)
class Uniform:
    """Flat background at one intensity."""

    intensity: float = 1.0


@dataclass(frozen=True)
class Checkerboard:
    cell_px: int = 32
    intensity_a: float = 0.15
    intensity_b: float = 0.9


@dataclass(frozen=True)
class TextLike:
    """Printed-text clutter: lines of dark word blocks plus small specks.

    Word blocks are sized to merge with (and swallow) any marker they touch;
    specks are sized to pass the default blob area gate and act as false
    positives.
    """

    seed: int = 0
    density: float = 1.0


@dataclass(frozen=True)
class BlobClutter:
    """Dark disk distractors, radii spanning below to above marker size."""

    seed: int = 0
    count: int = 20            # expected disks per tile (one tile ~ one sensor)
    radius_min_px: float = 3.0
    radius_max_px: float = 12.0
    intensity: float = 0.08


Background = Uniform | Checkerboard | TextLike | BlobClutter


# --------------------------------------------------------------------------
# Deformation fields


@dataclass(frozen=True)
class NoDeformation:
    pass


@dataclass(frozen=True)
class UniformShear:
    """Every marker translates by the same vector (px)."""

    vector: tuple[float, float]


@dataclass(frozen=True)
class RadialIndent:
    """Markers spread radially away from a pressed point.

    Magnitude is peak * (r/falloff) * exp(1 - r/falloff): zero at the
    center, maximal (= peak) on the ring r = falloff, decaying outside.
    """

    center: tuple[float, float]
    peak_px: float
    falloff_px: float


@dataclass(frozen=True)
class Scripted:
    """Explicit per-frame, per-marker displacement table (n_frames, n, 2)."""

    table: np.ndarray

    def __post_init__(self) -> None:
        t = np.ascontiguousarray(np.asarray(self.table, dtype=np.float64))
        if t.ndim != 3 or t.shape[2] != 2:
            raise ScenarioInvalid(f"scripted table must be (n_frames, n_markers, 2), got {t.shape}")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)


Deformation = NoDeformation | UniformShear | RadialIndent | Scripted


def deformation_displacements(
    deformation: Deformation,
    positions: np.ndarray,
    frame_index: int,
    scale: float = 1.0,
) -> np.ndarray:
    """True displacement of each marker for one frame, (n, 2) float64."""
    n = positions.shape[0]
    if isinstance(deformation, NoDeformation):
        return np.zeros((n, 2), dtype=np.float64)
    if isinstance(deformation, UniformShear):
        return np.tile(np.asarray(deformation.vector, dtype=np.float64) * scale, (n, 1))
    if isinstance(deformation, RadialIndent):
        delta = positions - np.asarray(deformation.center, dtype=np.float64)
        r = np.hypot(delta[:, 0], delta[:, 1])
        with np.errstate(invalid="ignore", divide="ignore"):
            mag = deformation.peak_px * (r / deformation.falloff_px) * np.exp(
                1.0 - r / deformation.falloff_px
            )
            unit = np.where(r[:, None] > 0.0, delta / np.maximum(r, 1e-300)[:, None], 0.0)
        return unit * (mag * scale)[:, None]
    if isinstance(deformation, Scripted):
        if frame_index >= deformation.table.shape[0]:
            raise ScenarioInvalid(
                f"scripted table has {deformation.table.shape[0]} frames, asked for {frame_index}"
            )
        return deformation.table[frame_index].copy()
    raise TypeError(f"unknown deformation {deformation!r}")


# --------------------------------------------------------------------------
# Scenario


@dataclass(frozen=True)
class Scenario:
    """Complete recipe for a rendered frame sequence."""

    layout: MarkerLayout
    background: tuple[Background, ...] = (Uniform(1.0),)
    deformation: Deformation = NoDeformation()
    n_frames: int = 1
    seed: int = 0
    noise_std: float = DEFAULT_NOISE_STD
    blur_px: float = DEFAULT_BLUR_PX
    fps: float = DEFAULT_FPS
    background_drift: tuple[float, float] = (0.0, 0.0)
    deformation_schedule: np.ndarray | None = None  # (n_frames,) amplitude scale
    max_displacement_px: float | None = None        # declared bound; default 0.45 * pitch
    name: str = ""

    def __post_init__(self) -> None:
        if self.n_frames < 1:
            raise ScenarioInvalid(f"n_frames must be >= 1, got {self.n_frames}")
        if self.noise_std < 0.0 or self.blur_px < 0.0 or self.fps <= 0.0:
            raise ScenarioInvalid("noise_std/blur_px must be >= 0 and fps > 0")
        if isinstance(self.background, (Uniform, Checkerboard, TextLike, BlobClutter)):
            object.__setattr__(self, "background", (self.background,))
        if self.deformation_schedule is not None:
            sched = np.ascontiguousarray(np.asarray(self.deformation_schedule, dtype=np.float64))
            if sched.shape != (self.n_frames,):
                raise ScenarioInvalid(
                    f"schedule must have shape ({self.n_frames},), got {sched.shape}"
                )
            sched.setflags(write=False)
            object.__setattr__(self, "deformation_schedule", sched)
        if self.max_displacement_px is None:
            object.__setattr__(self, "max_displacement_px", 0.45 * self.layout.spacing_px)

    def schedule_scale(self, frame_index: int) -> float:
        if self.deformation_schedule is None:
            return 1.0
        return float(self.deformation_schedule[frame_index])

    def true_displacements(self, frame_index: int) -> np.ndarray:
        return deformation_displacements(
            self.deformation,
            self.layout.initial_positions_px,
            frame_index,
            self.schedule_scale(frame_index),
        )


# --------------------------------------------------------------------------
# Drawing primitives


def _draw_disk(canvas: np.ndarray, cx: float, cy: float, r: float, color: float) -> None:
    """Alpha-composite a disk with coverage-weighted edge pixels."""
    h, w = canvas.shape
    x0 = max(0, int(math.floor(cx - r - 1.0)))
    x1 = min(w, int(math.ceil(cx + r + 2.0)))
    y0 = max(0, int(math.floor(cy - r - 1.0)))
    y1 = min(h, int(math.ceil(cy + r + 2.0)))
    if x0 >= x1 or y0 >= y1:
        return
    xs = np.arange(x0, x1, dtype=np.float64) + 0.5
    ys = np.arange(y0, y1, dtype=np.float64) + 0.5
    d = np.hypot(xs[None, :] - cx, ys[:, None] - cy)
    alpha = np.clip(r - d + 0.5, 0.0, 1.0)
    patch = canvas[y0:y1, x0:x1]
    patch += alpha * (color - patch)


def _draw_rect(canvas: np.ndarray, x: int, y: int, w: int, h: int, color: float) -> None:
    hh, ww = canvas.shape
    x0, y0 = max(0, x), max(0, y)
    x1, y1 = min(ww, x + w), min(hh, y + h)
    if x0 < x1 and y0 < y1:
        canvas[y0:y1, x0:x1] = color


@functools.lru_cache(maxsize=4096)
def _text_tile(bg: TextLike, tx: int, ty: int) -> tuple[tuple[int, int, int, int, float], ...]:
    """Word/speck rectangles (x, y, w, h, intensity) for one pattern tile."""
    rng = np.random.default_rng((bg.seed, 101, tx + _TILE_OFFSET, ty + _TILE_OFFSET))
    glyphs: list[tuple[int, int, int, int, float]] = []
    line_pitch = 30
    for ly in range(6, _TILE_PX, line_pitch):
        if rng.random() > min(1.0, 0.9 * bg.density):
            continue
        x = int(rng.integers(0, 40))
        while x < _TILE_PX:
            width = int(rng.integers(26, 64))
            height = int(rng.integers(14, 21))
            if rng.random() < min(1.0, 0.7 * bg.density):
                ink = float(rng.uniform(0.03, 0.16))
                glyphs.append((tx * _TILE_PX + x, ty * _TILE_PX + ly, width, height, ink))
            x += width + int(rng.integers(14, 40))
    n_specks = int(rng.poisson(9.0 * bg.density))
    for _ in range(n_specks):
        side = int(rng.integers(8, 15))
        sx = int(rng.integers(0, _TILE_PX))
        sy = int(rng.integers(0, _TILE_PX))
        ink = float(rng.uniform(0.03, 0.16))
        glyphs.append((tx * _TILE_PX + sx, ty * _TILE_PX + sy, side, side, ink))
    return tuple(glyphs)


@functools.lru_cache(maxsize=4096)
def _clutter_tile(bg: BlobClutter, tx: int, ty: int) -> tuple[tuple[float, float, float], ...]:
    """Distractor disks (cx, cy, r) for one pattern tile."""
    rng = np.random.default_rng((bg.seed, 202, tx + _TILE_OFFSET, ty + _TILE_OFFSET))
    disks = []
    for _ in range(bg.count):
        cx = tx * _TILE_PX + float(rng.uniform(0, _TILE_PX))
        cy = ty * _TILE_PX + float(rng.uniform(0, _TILE_PX))
        r = float(rng.uniform(bg.radius_min_px, bg.radius_max_px))
        disks.append((cx, cy, r))
    return tuple(disks)


def _visible_tiles(phase: tuple[float, float], size: tuple[int, int],
                   margin: float) -> list[tuple[int, int]]:
    w, h = size
    tx0 = math.floor((phase[0] - margin) / _TILE_PX)
    tx1 = math.floor((phase[0] + w + margin) / _TILE_PX)
    ty0 = math.floor((phase[1] - margin) / _TILE_PX)
    ty1 = math.floor((phase[1] + h + margin) / _TILE_PX)
    return [(tx, ty) for ty in range(ty0, ty1 + 1) for tx in range(tx0, tx1 + 1)]


def _render_background(canvas: np.ndarray, layers: tuple[Background, ...],
                       phase: tuple[float, float]) -> None:
    h, w = canvas.shape
    for layer in layers:
        if isinstance(layer, Uniform):
            canvas[:] = layer.intensity
        elif isinstance(layer, Checkerboard):
            xs = np.floor((np.arange(w) + phase[0]) / layer.cell_px).astype(np.int64)
            ys = np.floor((np.arange(h) + phase[1]) / layer.cell_px).astype(np.int64)
            odd = (xs[None, :] + ys[:, None]) % 2 == 1
            canvas[:] = np.where(odd, layer.intensity_b, layer.intensity_a)
        elif isinstance(layer, TextLike):
            for tile in _visible_tiles(phase, (w, h), margin=80.0):
                for gx, gy, gw, gh, ink in _text_tile(layer, *tile):
                    _draw_rect(canvas, int(round(gx - phase[0])), int(round(gy - phase[1])),
                               gw, gh, ink)
        elif isinstance(layer, BlobClutter):
            for tile in _visible_tiles(phase, (w, h), margin=2.0 * layer.radius_max_px):
                for cx, cy, r in _clutter_tile(layer, *tile):
                    _draw_disk(canvas, cx - phase[0], cy - phase[1], r, layer.intensity)
        else:
            raise TypeError(f"unknown background layer {layer!r}")


# --------------------------------------------------------------------------
# Frame rendering


def render_frame(scenario: Scenario, frame_index: int) -> tuple[GrayFrame, DeviationField]:
    """Render one frame and the exact displacement field used to place markers."""
    if not 0 <= frame_index < scenario.n_frames:
        raise ScenarioInvalid(f"frame_index {frame_index} outside 0..{scenario.n_frames - 1}")
    layout = scenario.layout
    w, h = layout.frame_size_px

    disp = scenario.true_displacements(frame_index)
    max_disp = float(np.hypot(disp[:, 0], disp[:, 1]).max(initial=0.0))
    if max_disp > scenario.max_displacement_px:
        raise ScenarioInvalid(
            f"frame {frame_index} displaces a marker {max_disp:.3f} px, above the "
            f"declared bound {scenario.max_displacement_px:.3f} px"
        )

    canvas = np.ones((h, w), dtype=np.float64)
    phase = (scenario.background_drift[0] * frame_index,
             scenario.background_drift[1] * frame_index)
    _render_background(canvas, scenario.background, phase)

    g = layout.geometry
    centers = layout.initial_positions_px + disp
    for cx, cy in centers:
        if g.style is MarkerStyle.KEYLINE:
            _draw_disk(canvas, cx, cy, layout.r_out_px, g.outer_color)
        _draw_disk(canvas, cx, cy, layout.r_in_px, g.inner_color)

    if scenario.blur_px > 0.0:
        canvas = ndimage.gaussian_filter(canvas, sigma=scenario.blur_px, mode="nearest")
    if scenario.noise_std > 0.0:
        rng = np.random.default_rng((scenario.seed, frame_index))
        canvas += rng.normal(0.0, scenario.noise_std, canvas.shape)
    np.clip(canvas, 0.0, 1.0, out=canvas)

    # Snap to the 8-bit grid so in-memory frames equal their file round trip.
    quantized = np.round(canvas * 255.0).astype(np.uint8)
    frame = GrayFrame(
        width=w,
        height=h,
        pixels=quantized.astype(np.float32) / np.float32(255.0),
        timestamp=frame_index / scenario.fps,
    )
    return frame, DeviationField(displacements_px=disp, provenance=Provenance.SIMULATED)


def render_frame_u8(scenario: Scenario, frame_index: int) -> tuple[np.ndarray, np.ndarray]:
    """8-bit variant for file output: (uint8 image, (n, 2) displacement)."""
    frame, truth = render_frame(scenario, frame_index)
    u8 = np.round(frame.pixels.astype(np.float64) * 255.0).astype(np.uint8)
    return u8, truth.displacements_px


# --------------------------------------------------------------------------
# Canned scenarios


def _ramp_hold_release(n_frames: int, start: int, full: int, release: int,
                       gone: int) -> np.ndarray:
    """Amplitude envelope 0 -> 1 -> 0 with linear ramps."""
    t = np.arange(n_frames, dtype=np.float64)
    up = np.clip((t - start) / max(1, full - start), 0.0, 1.0)
    down = 1.0 - np.clip((t - release) / max(1, gone - release), 0.0, 1.0)
    return np.minimum(up, down)


def scenario_fig4(style: MarkerStyle | str = MarkerStyle.KEYLINE, filtered: bool = True,
                  n_frames: int = 200, seed: int = 7) -> Scenario:
    """The canned benchmark: text + blob clutter sweeping past, indent mid-sequence.

    ``filtered`` names the tracking variant the caller intends to run; the
    rendered sequence is identical either way (only the marker style changes
    pixels), so the three benchmark variants stay comparable.
    """
    style = MarkerStyle(style)
    layout = default_layout(style)
    sched = _ramp_hold_release(
        n_frames,
        start=int(0.30 * n_frames),
        full=int(0.45 * n_frames),
        release=int(0.70 * n_frames),
        gone=int(0.85 * n_frames),
    )
    return Scenario(
        layout=layout,
        background=(
            Uniform(0.93),
            TextLike(seed=11, density=1.0),
            BlobClutter(seed=12, count=26, radius_min_px=3.0, radius_max_px=12.0,
                        intensity=0.08),
        ),
        deformation=RadialIndent(center=(205.0, 192.0), peak_px=6.0, falloff_px=85.0),
        deformation_schedule=sched,
        n_frames=n_frames,
        seed=seed,
        background_drift=(1.7, 0.0),
        name=f"fig4-{style.value}-{'filtered' if filtered else 'unfiltered'}",
    )


def scenario_idle(n_frames: int = 100, seed: int = 3,
                  noise_std: float = DEFAULT_NOISE_STD) -> Scenario:
    """Clean white background, no deformation."""
    return Scenario(
        layout=default_layout(),
        background=(Uniform(1.0),),
        n_frames=n_frames,
        seed=seed,
        noise_std=noise_std,
        name="idle",
    )


def scenario_radial_indent(n_frames: int = 60, seed: int = 5, peak_px: float = 8.0,
                           noise_std: float = DEFAULT_NOISE_STD) -> Scenario:
    """White background with a pressed indent ramping in over 30 frames."""
    sched = np.minimum(np.arange(n_frames, dtype=np.float64) / 30.0, 1.0)
    return Scenario(
        layout=default_layout(),
        background=(Uniform(1.0),),
        deformation=RadialIndent(center=(200.0, 200.0), peak_px=peak_px, falloff_px=90.0),
        deformation_schedule=sched,
        n_frames=n_frames,
        seed=seed,
        noise_std=noise_std,
        name="radial-indent",
    )


def scenario_uniform_shear(n_frames: int = 60, seed: int = 9, shear_px: float = 8.0,
                           noise_std: float = DEFAULT_NOISE_STD) -> Scenario:
    """White background, all markers sliding together up to ``shear_px``."""
    sched = np.minimum(np.arange(n_frames, dtype=np.float64) / 30.0, 1.0)
    vec = (shear_px / math.sqrt(2.0), shear_px / math.sqrt(2.0))
    return Scenario(
        layout=default_layout(),
        background=(Uniform(1.0),),
        deformation=UniformShear(vector=vec),
        deformation_schedule=sched,
        n_frames=n_frames,
        seed=seed,
        noise_std=noise_std,
        name="uniform-shear",
    )


def _describe(obj: Background | Deformation) -> str:
    if isinstance(obj, Uniform):
        return f"background uniform {obj.intensity!r}"
    if isinstance(obj, Checkerboard):
        return f"background checkerboard {obj.cell_px} {obj.intensity_a!r} {obj.intensity_b!r}"
    if isinstance(obj, TextLike):
        return f"background textlike {obj.seed} {obj.density!r}"
    if isinstance(obj, BlobClutter):
        return (f"background blobclutter {obj.seed} {obj.count} "
                f"{obj.radius_min_px!r} {obj.radius_max_px!r} {obj.intensity!r}")
    if isinstance(obj, NoDeformation):
        return "deformation none"
    if isinstance(obj, UniformShear):
        return f"deformation uniform_shear {obj.vector[0]!r} {obj.vector[1]!r}"
    if isinstance(obj, RadialIndent):
        return (f"deformation radial_indent {obj.center[0]!r} {obj.center[1]!r} "
                f"{obj.peak_px!r} {obj.falloff_px!r}")
    if isinstance(obj, Scripted):
        return "deformation scripted"
    return f"# {obj!r}"


def write_sequence(scenario: Scenario, out_dir: str | Path):
    """Render the whole scenario to numbered PGMs plus truth and manifest files.

    Frames render in parallel (capped by KEYTRACK_THREADS) but results are
    written in index order, so output bytes never depend on scheduling.
    Returns the :class:`keytrack.io.SequenceManifest` for the directory.
    """
    from . import io as kio

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    pattern = "frame_{index:06d}.pgm"
    save_layout(scenario.layout, out_dir / "layout.txt")

    workers = kio.worker_count(scenario.n_frames)
    with open(out_dir / "truth.csv", "w", encoding="utf-8") as truth_f:
        truth_f.write(kio.TRUTH_HEADER + "\n")
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rendered = pool.map(lambda i: render_frame_u8(scenario, i),
                                range(scenario.n_frames))
            for index, (u8, disp) in enumerate(rendered):
                kio.write_pgm(out_dir / pattern.format(index=index), u8)
                kio.write_truth(truth_f, index, disp)

    manifest = kio.SequenceManifest(
        directory=out_dir,
        layout_file="layout.txt",
        truth_file="truth.csv",
        frame_pattern=pattern,
        n_frames=scenario.n_frames,
        fps=scenario.fps,
        name=scenario.name or "scenario",
    )
    extra = [
        f"seed {scenario.seed}",
        f"noise_std {scenario.noise_std!r}",
        f"blur_px {scenario.blur_px!r}",
        f"drift {scenario.background_drift[0]!r} {scenario.background_drift[1]!r}",
        *[_describe(layer) for layer in scenario.background],
        _describe(scenario.deformation),
    ]
    kio.write_manifest(manifest, extra_lines=extra)
    return manifest
