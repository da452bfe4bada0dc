"""Marker array description: geometry, grid layouts, and the layout file format.

The sensor carries a printed array of markers on its elastomer. Everything
downstream (blob gating, association, deviation output) is defined relative
to the marker positions recorded here, so layouts are immutable and
deterministic: the same inputs always produce the same position list.

Default scale convention: 10 px/mm, which puts the canonical sensor
(40 mm x 40 mm, 8x8 markers at 3.5 mm pitch) on a 400x400 px frame with
6 px / 10 px marker radii.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import GridOutOfBounds, InvalidGeometry, StreamFormatError

DEFAULT_PX_PER_MM = 10.0
DEFAULT_SENSOR_MM = (40.0, 40.0)
DEFAULT_SPACING_MM = 3.5
DEFAULT_R_IN_MM = 0.6
DEFAULT_R_OUT_MM = 1.0

LAYOUT_FORMAT_VERSION = 1


class MarkerStyle(str, Enum):
    """Printed marker style."""

    KEYLINE = "keyline"  # two concentric circles with contrasting colors
    SOLID = "solid"      # single filled circle


@dataclass(frozen=True)
class MarkerGeometry:
    """Physical marker shape and print colors.

    Radii are in millimeters; colors are intensities in [0, 1]. For the
    solid style only the inner circle exists and ``r_out`` equals ``r_in``.
    """

    r_in_mm: float = DEFAULT_R_IN_MM
    r_out_mm: float = DEFAULT_R_OUT_MM
    inner_color: float = 0.0
    outer_color: float = 1.0
    style: MarkerStyle = MarkerStyle.KEYLINE

    def __post_init__(self) -> None:
        if not (0.0 <= self.inner_color <= 1.0 and 0.0 <= self.outer_color <= 1.0):
            raise InvalidGeometry("marker colors must be intensities in [0, 1]")
        if self.style is MarkerStyle.KEYLINE:
            if not 0.0 < self.r_in_mm < self.r_out_mm:
                raise InvalidGeometry(
                    f"keyline markers need 0 < r_in < r_out, got {self.r_in_mm} / {self.r_out_mm}"
                )
            if self.inner_color == self.outer_color:
                raise InvalidGeometry("keyline markers need contrasting inner/outer colors")
        else:
            if self.r_in_mm <= 0.0:
                raise InvalidGeometry(f"solid markers need r_in > 0, got {self.r_in_mm}")
            if self.r_out_mm != self.r_in_mm:
                raise InvalidGeometry("solid markers have no outer circle; set r_out_mm = r_in_mm")

    @classmethod
    def solid(cls, r_mm: float = DEFAULT_R_IN_MM, color: float = 0.0) -> "MarkerGeometry":
        return cls(r_in_mm=r_mm, r_out_mm=r_mm, inner_color=color, outer_color=color,
                   style=MarkerStyle.SOLID)


@dataclass(frozen=True)
class MarkerLayout:
    """Immutable description of the marker array in pixel space.

    Marker ids are array indices (0 .. n_markers-1); for generated grids the
    order is row-major. Positions live in a continuous pixel coordinate
    system where pixel (row i, col j) covers [j, j+1) x [i, i+1).
    """

    n_markers: int
    spacing_mm: float
    sensor_size_mm: tuple[float, float]
    px_per_mm: float
    initial_positions_px: np.ndarray  # (n_markers, 2) float64, columns (x, y)
    geometry: MarkerGeometry

    def __post_init__(self) -> None:
        pos = np.ascontiguousarray(np.asarray(self.initial_positions_px, dtype=np.float64))
        if pos.shape != (self.n_markers, 2):
            raise GridOutOfBounds(
                f"expected {self.n_markers} positions, got array of shape {pos.shape}"
            )
        if not np.all(np.isfinite(pos)):
            raise GridOutOfBounds("marker positions must be finite")
        pos.setflags(write=False)
        object.__setattr__(self, "initial_positions_px", pos)
        w, h = self.frame_size_px
        x, y = pos[:, 0], pos[:, 1]
        if np.any((x < 0) | (x >= w) | (y < 0) | (y >= h)):
            raise GridOutOfBounds(f"marker centers must lie inside the {w}x{h} px sensor bounds")

    @property
    def frame_size_px(self) -> tuple[int, int]:
        """Sensor bounds in pixels as (width, height)."""
        return (
            int(round(self.sensor_size_mm[0] * self.px_per_mm)),
            int(round(self.sensor_size_mm[1] * self.px_per_mm)),
        )

    @property
    def spacing_px(self) -> float:
        return self.spacing_mm * self.px_per_mm

    @property
    def r_in_px(self) -> float:
        return self.geometry.r_in_mm * self.px_per_mm

    @property
    def r_out_px(self) -> float:
        return self.geometry.r_out_mm * self.px_per_mm

    def min_pairwise_distance_px(self) -> float:
        """Smallest center-to-center distance, +inf for a single marker."""
        if self.n_markers < 2:
            return math.inf
        p = self.initial_positions_px
        d2 = np.sum((p[:, None, :] - p[None, :, :]) ** 2, axis=-1)
        d2[np.diag_indices(self.n_markers)] = np.inf
        return float(np.sqrt(d2.min()))


class Provenance(str, Enum):
    SIMULATED = "simulated"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class DeviationField:
    """True per-marker displacement vectors, one row per marker id."""

    displacements_px: np.ndarray  # (n_markers, 2) float64
    provenance: Provenance = Provenance.UNKNOWN

    def __post_init__(self) -> None:
        d = np.ascontiguousarray(np.asarray(self.displacements_px, dtype=np.float64))
        if d.ndim != 2 or d.shape[1] != 2:
            raise ValueError(f"displacements must be (n, 2), got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("displacements must be finite")
        d.setflags(write=False)
        object.__setattr__(self, "displacements_px", d)


@dataclass(frozen=True)
class LayoutCheck:
    """One validation check with its outcome."""

    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class LayoutReport:
    """Report-style result of :func:`validate_layout`."""

    checks: tuple[LayoutCheck, ...]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[LayoutCheck]:
        return [c for c in self.checks if not c.passed]


def canonical_layout(
    rows: int,
    cols: int,
    spacing_mm: float = DEFAULT_SPACING_MM,
    px_per_mm: float = DEFAULT_PX_PER_MM,
    origin_px: tuple[float, float] = (0.0, 0.0),
    geometry: MarkerGeometry | None = None,
    sensor_size_mm: tuple[float, float] = DEFAULT_SENSOR_MM,
) -> MarkerLayout:
    """Build a row-major rows x cols grid of markers.

    Marker id i*cols + j sits at origin + (j*s, i*s) with s the pitch in px.
    Raises :class:`GridOutOfBounds` if any center falls outside the sensor
    pixel bounds and :class:`InvalidGeometry` via the geometry constructor.
    """
    if rows < 1 or cols < 1:
        raise ValueError(f"grid must be at least 1x1, got {rows}x{cols}")
    if spacing_mm <= 0.0 or px_per_mm <= 0.0:
        raise ValueError("spacing_mm and px_per_mm must be positive")
    geometry = geometry if geometry is not None else MarkerGeometry()

    s = spacing_mm * px_per_mm
    jj, ii = np.meshgrid(np.arange(cols, dtype=np.float64), np.arange(rows, dtype=np.float64))
    pos = np.column_stack([
        origin_px[0] + jj.ravel() * s,
        origin_px[1] + ii.ravel() * s,
    ])
    return MarkerLayout(
        n_markers=rows * cols,
        spacing_mm=spacing_mm,
        sensor_size_mm=sensor_size_mm,
        px_per_mm=px_per_mm,
        initial_positions_px=pos,
        geometry=geometry,
    )


def default_layout(style: MarkerStyle = MarkerStyle.KEYLINE) -> MarkerLayout:
    """The canonical 8x8 array centered on the 400x400 px sensor."""
    geometry = MarkerGeometry() if style is MarkerStyle.KEYLINE else MarkerGeometry.solid()
    span = 7 * DEFAULT_SPACING_MM * DEFAULT_PX_PER_MM
    ox = (DEFAULT_SENSOR_MM[0] * DEFAULT_PX_PER_MM - span) / 2.0
    oy = (DEFAULT_SENSOR_MM[1] * DEFAULT_PX_PER_MM - span) / 2.0
    return canonical_layout(8, 8, origin_px=(ox, oy), geometry=geometry)


def validate_layout(
    layout: MarkerLayout,
    frame_size: tuple[int, int],
    gate_radius_px: float,
) -> LayoutReport:
    """Check a layout against a frame size and an association gate radius.

    Never raises; returns a per-check report. The ambiguity check fails when
    the pitch in pixels is <= twice the gate radius, because two neighboring
    markers could then claim the same detection.
    """
    checks: list[LayoutCheck] = []
    w, h = frame_size
    pos = layout.initial_positions_px
    inside = np.all((pos[:, 0] >= 0) & (pos[:, 0] < w) & (pos[:, 1] >= 0) & (pos[:, 1] < h))
    checks.append(LayoutCheck(
        "positions_in_frame", bool(inside),
        f"all {layout.n_markers} markers inside {w}x{h} px" if inside
        else f"marker centers outside {w}x{h} px frame",
    ))

    min_d = layout.min_pairwise_distance_px()
    grid_ok = layout.n_markers < 2 or min_d >= layout.spacing_px - 1e-9
    checks.append(LayoutCheck(
        "grid_regularity", grid_ok,
        f"min pairwise distance {min_d:.6g} px vs pitch {layout.spacing_px:.6g} px",
    ))

    gate_ok = layout.n_markers < 2 or layout.spacing_px > 2.0 * gate_radius_px
    checks.append(LayoutCheck(
        "gate_ambiguity", gate_ok,
        f"pitch {layout.spacing_px:.6g} px vs 2*gate {2.0 * gate_radius_px:.6g} px",
    ))
    return LayoutReport(checks=tuple(checks))


def save_layout(layout: MarkerLayout, path: str | Path) -> None:
    """Write the layout file format (see docs/FORMATS.md)."""
    g = layout.geometry
    lines = [
        f"format_version {LAYOUT_FORMAT_VERSION}",
        "kind layout",
        f"n_markers {layout.n_markers}",
        f"spacing_mm {layout.spacing_mm!r}",
        f"sensor_mm {layout.sensor_size_mm[0]!r} {layout.sensor_size_mm[1]!r}",
        f"px_per_mm {layout.px_per_mm!r}",
        f"style {g.style.value}",
        f"r_in_mm {g.r_in_mm!r}",
        f"r_out_mm {g.r_out_mm!r}",
        f"inner_color {g.inner_color!r}",
        f"outer_color {g.outer_color!r}",
        "positions_px",
    ]
    for i, (x, y) in enumerate(layout.initial_positions_px):
        lines.append(f"{i} {float(x)!r} {float(y)!r}")
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_layout_text(text: str) -> MarkerLayout:
    """Parse the layout file format from text."""
    fields: dict[str, str] = {}
    positions: list[tuple[int, float, float]] = []
    in_positions = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if in_positions:
            if line == "end":
                in_positions = False
                continue
            parts = line.split()
            if len(parts) != 3:
                raise StreamFormatError(f"layout line {lineno}: expected 'id x y', got {line!r}")
            positions.append((int(parts[0]), float(parts[1]), float(parts[2])))
            continue
        if line == "positions_px":
            in_positions = True
            continue
        key, _, value = line.partition(" ")
        if not value:
            raise StreamFormatError(f"layout line {lineno}: expected 'key value', got {line!r}")
        fields[key] = value.strip()
    if in_positions:
        raise StreamFormatError("layout positions_px block missing 'end'")

    try:
        version = int(fields["format_version"])
        if version != LAYOUT_FORMAT_VERSION:
            raise StreamFormatError(f"unsupported layout format_version {version}")
        n = int(fields["n_markers"])
        sensor = tuple(float(v) for v in fields["sensor_mm"].split())
        geometry = MarkerGeometry(
            r_in_mm=float(fields["r_in_mm"]),
            r_out_mm=float(fields["r_out_mm"]),
            inner_color=float(fields["inner_color"]),
            outer_color=float(fields["outer_color"]),
            style=MarkerStyle(fields["style"]),
        )
        spacing_mm = float(fields["spacing_mm"])
        px_per_mm = float(fields["px_per_mm"])
    except KeyError as exc:
        raise StreamFormatError(f"layout file missing field {exc.args[0]!r}") from None
    if len(sensor) != 2:
        raise StreamFormatError("sensor_mm must hold two values")

    if len(positions) != n:
        raise StreamFormatError(f"layout declares {n} markers but lists {len(positions)}")
    pos = np.zeros((n, 2), dtype=np.float64)
    seen = set()
    for mid, x, y in positions:
        if mid in seen or not (0 <= mid < n):
            raise StreamFormatError(f"bad or duplicate marker id {mid}")
        seen.add(mid)
        pos[mid] = (x, y)
    return MarkerLayout(
        n_markers=n,
        spacing_mm=spacing_mm,
        sensor_size_mm=(sensor[0], sensor[1]),
        px_per_mm=px_per_mm,
        initial_positions_px=pos,
        geometry=geometry,
    )


def load_layout(path: str | Path) -> MarkerLayout:
    """Load a layout file written by :func:`save_layout`."""
    return parse_layout_text(Path(path).read_text(encoding="utf-8"))
