"""Frame-to-candidates pipeline: grayscale, intensity threshold, dark-blob extraction.

The tracker never sees pixels directly; it consumes the candidate set
produced here. The pipeline is deliberately dumb and deterministic:
identical frames produce identical candidate sets, in the same order
(scanline order of component discovery), so downstream results are
reproducible bit for bit.

Connectivity is 8-connected so that thin diagonal ring segments stay in one
piece. Centroids use pixel centers at (col + 0.5, row + 0.5), which keeps
localization unbiased for symmetric blobs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatch
from .layout import DEFAULT_PX_PER_MM, DEFAULT_R_IN_MM, MarkerLayout

# ITU-R 601 luma weights; the conversion target is a plain luminance image.
_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)

_EIGHT_CONNECTED = np.ones((3, 3), dtype=np.int32)

DEFAULT_TAU = 0.35


def _default_area_window(r_px: float) -> tuple[float, float]:
    # Cheap first-stage rejection: nominal dark disk area is pi*r^2.
    disk = math.pi * r_px * r_px
    return 0.4 * disk, 2.5 * disk


@dataclass(frozen=True)
class PipelineConfig:
    """Threshold and area-gate settings for measurement acquisition."""

    tau: float = DEFAULT_TAU
    area_min: float = _default_area_window(DEFAULT_R_IN_MM * DEFAULT_PX_PER_MM)[0]
    area_max: float = _default_area_window(DEFAULT_R_IN_MM * DEFAULT_PX_PER_MM)[1]

    def __post_init__(self) -> None:
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must be in (0, 1), got {self.tau}")
        if not 0.0 < self.area_min <= self.area_max:
            raise ValueError(f"need 0 < area_min <= area_max, got {self.area_min}..{self.area_max}")

    @classmethod
    def for_layout(cls, layout: MarkerLayout, tau: float = DEFAULT_TAU) -> "PipelineConfig":
        """Derive the area window from the layout's inner marker radius."""
        lo, hi = _default_area_window(layout.r_in_px)
        return cls(tau=tau, area_min=lo, area_max=hi)


@dataclass(frozen=True)
class GrayFrame:
    """Single-channel image with intensities in [0, 1] plus a timestamp."""

    width: int
    height: int
    pixels: np.ndarray  # (height, width) float32, row-major
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        px = np.ascontiguousarray(np.asarray(self.pixels, dtype=np.float32))
        if px.shape != (self.height, self.width):
            raise DimensionMismatch(
                f"pixels shape {px.shape} does not match {self.height}x{self.width}"
            )
        lo, hi = float(px.min(initial=0.0)), float(px.max(initial=0.0))
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"pixel intensities must lie in [0, 1], got range [{lo}, {hi}]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)


@dataclass(frozen=True)
class BinaryMask:
    """Boolean image, true where the source pixel was below threshold."""

    width: int
    height: int
    bits: np.ndarray  # (height, width) bool

    def __post_init__(self) -> None:
        b = np.ascontiguousarray(np.asarray(self.bits, dtype=bool))
        if b.shape != (self.height, self.width):
            raise DimensionMismatch(f"mask shape {b.shape} does not match {self.height}x{self.width}")
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)


@dataclass(frozen=True)
class Blob:
    """One connected dark component: subpixel centroid, pixel area, bbox.

    ``bbox`` holds inclusive pixel-index bounds (x_min, y_min, x_max, y_max);
    the centroid always lies inside the covered pixel area
    [x_min, x_max+1] x [y_min, y_max+1].
    """

    centroid: tuple[float, float]
    area: int
    bbox: tuple[int, int, int, int]


@dataclass(frozen=True)
class BlobSet:
    """Candidate detections extracted from one frame.

    May be empty, and may hold more blobs than there are markers; clutter
    rejection is the tracker's job, not the pipeline's.
    """

    blobs: tuple[Blob, ...]
    frame_timestamp: float = 0.0
    _centroids: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.blobs)

    def centroids_xy(self) -> np.ndarray:
        """(n, 2) float64 array of blob centroids, cached."""
        if self._centroids is None:
            arr = np.array([b.centroid for b in self.blobs], dtype=np.float64).reshape(-1, 2)
            arr.setflags(write=False)
            object.__setattr__(self, "_centroids", arr)
        return self._centroids


def to_gray(channels: np.ndarray, timestamp: float = 0.0) -> GrayFrame:
    """Convert an (H, W, 3) image with channel values in [0, 1] to luminance."""
    arr = np.asarray(channels)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DimensionMismatch(f"expected an (H, W, 3) image, got shape {arr.shape}")
    luma = arr.astype(np.float64) @ _LUMA_WEIGHTS
    # Weights sum to 1 so the result is already in [0, 1] up to rounding.
    np.clip(luma, 0.0, 1.0, out=luma)
    h, w = luma.shape
    return GrayFrame(width=w, height=h, pixels=luma.astype(np.float32), timestamp=timestamp)


def threshold(frame: GrayFrame, tau: float) -> BinaryMask:
    """Mark pixels strictly below ``tau`` as dark."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    return BinaryMask(width=frame.width, height=frame.height,
                      bits=frame.pixels < np.float32(tau))


def detect_blobs(mask: BinaryMask, config: PipelineConfig) -> BlobSet:
    """Extract 8-connected dark components whose area passes the gate.

    Components touching the border are kept. Blobs are ordered by the
    scanline position of each component's first pixel, so the output is a
    pure function of the mask. Centroid = mean of member pixel centers.
    """
    labels, n_components = ndimage.label(mask.bits, structure=_EIGHT_CONNECTED)
    if n_components == 0:
        return BlobSet(blobs=())

    flat = labels.ravel()
    idx = np.flatnonzero(flat)
    lab = flat[idx]
    areas = np.bincount(lab, minlength=n_components + 1)

    keep = np.flatnonzero((areas >= config.area_min) & (areas <= config.area_max))
    keep = keep[keep > 0]
    if keep.size == 0:
        return BlobSet(blobs=())

    # Scanline discovery order = ascending first flat index per label.
    uniq, first_idx = np.unique(lab, return_index=True)
    first = np.full(n_components + 1, idx.size, dtype=np.int64)
    first[uniq] = first_idx
    keep = keep[np.argsort(first[keep], kind="stable")]

    xs = (idx % mask.width).astype(np.float64)
    ys = (idx // mask.width).astype(np.float64)
    sum_x = np.bincount(lab, weights=xs, minlength=n_components + 1)
    sum_y = np.bincount(lab, weights=ys, minlength=n_components + 1)
    slices = ndimage.find_objects(labels)

    blobs = []
    for label_id in keep:
        a = int(areas[label_id])
        cx = sum_x[label_id] / a + 0.5
        cy = sum_y[label_id] / a + 0.5
        sy, sx = slices[label_id - 1]
        blobs.append(Blob(
            centroid=(float(cx), float(cy)),
            area=a,
            bbox=(int(sx.start), int(sy.start), int(sx.stop) - 1, int(sy.stop) - 1),
        ))
    return BlobSet(blobs=tuple(blobs))


def acquire_measurements(frame: GrayFrame, config: PipelineConfig) -> BlobSet:
    """Threshold + blob detection; the single entry point the tracker calls."""
    mask = threshold(frame, config.tau)
    blobs = detect_blobs(mask, config)
    return BlobSet(blobs=blobs.blobs, frame_timestamp=frame.timestamp)
