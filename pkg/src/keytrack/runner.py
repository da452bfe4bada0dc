"""The three tracking variants behind one per-frame interface.

  - keyline-filtered: the full per-marker Kalman tracker with gating.
  - keyline-unfiltered: stateless nearest-initial-position matching; its
    reported count is the raw detection count, which exceeds the marker
    count whenever clutter survives the pipeline.
  - solid: identical matching to keyline-unfiltered; the difference is in
    the sensor (solid markers vanish against dark backgrounds), not in the
    code path, so the two variants share an implementation here.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .errors import LayoutInvalid
from .layout import MarkerLayout
from .pipeline import GrayFrame, PipelineConfig, acquire_measurements
from .tracker import (
    DeviationRecord,
    NoiseParams,
    TrackerState,
    init_tracker,
    match_nearest_initial,
    track_candidates,
)


class Mode(str, Enum):
    SOLID = "solid"
    KEYLINE_UNFILTERED = "keyline-unfiltered"
    KEYLINE_FILTERED = "keyline-filtered"


@dataclass(frozen=True)
class FrameResult:
    records: list[DeviationRecord]
    marker_count: int      # what the variant reports as "markers this frame"
    detection_count: int   # raw |Z_t| for the same frame


class VariantRunner:
    """Single-owner frame processor for one tracking variant."""

    def __init__(
        self,
        mode: Mode,
        layout: MarkerLayout,
        pipeline: PipelineConfig,
        noise: NoiseParams | None = None,
        gate_radius_px: float | None = None,
        p0: float | None = None,
    ) -> None:
        self.mode = Mode(mode)
        self.layout = layout
        self.pipeline = pipeline
        self.frame_index = 0
        self.state: TrackerState | None = None
        if self.mode is Mode.KEYLINE_FILTERED:
            self.state = init_tracker(layout, noise=noise, gate_radius_px=gate_radius_px, p0=p0)

    def process(self, frame: GrayFrame) -> FrameResult:
        w, h = self.layout.frame_size_px
        if (frame.width, frame.height) != (w, h):
            raise LayoutInvalid(
                f"frame is {frame.width}x{frame.height} px but layout expects {w}x{h}"
            )
        blobs = acquire_measurements(frame, self.pipeline)
        if self.state is not None:
            records = track_candidates(self.state, blobs)
            marker_count = len(records)
        else:
            records = match_nearest_initial(self.layout, blobs, self.frame_index)
            marker_count = len(blobs)
        self.frame_index += 1
        return FrameResult(records=records, marker_count=marker_count,
                           detection_count=len(blobs))
