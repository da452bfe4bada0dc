"""Per-frame latency and marker-count benchmarking.

Timing covers measurement acquisition plus tracking for each frame; frame
decoding and record writing sit outside the timed region because they are
I/O-bound and not part of the per-frame algorithm. The first ``warmup``
frames are processed but excluded from the latency statistics.

The reference budget is the 120 Hz frame period (8.33 ms). The report
compares against it but the comparison is informational; what counts as
"fast enough" depends on the camera.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .pipeline import GrayFrame
from .runner import FrameResult, VariantRunner

BUDGET_MS_120HZ = 1000.0 / 120.0
REFERENCE_MS = 6.08  # per-frame time of the original sensor system; hardware-dependent


@dataclass
class BenchReport:
    """Counts and wall-time statistics for one benchmark run."""

    mode: str
    warmup: int
    marker_counts: list[int] = field(default_factory=list)
    detection_counts: list[int] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)
    budget_ms: float = BUDGET_MS_120HZ

    @property
    def processed_frames(self) -> int:
        return len(self.wall_ms)

    @property
    def frame_count(self) -> int:
        """Frames contributing to latency statistics (processed minus warmup)."""
        return max(0, self.processed_frames - self.warmup)

    def _measured(self) -> np.ndarray:
        return np.asarray(self.wall_ms[self.warmup:], dtype=np.float64)

    @property
    def mean_ms(self) -> float | None:
        m = self._measured()
        return float(m.mean()) if m.size else None

    @property
    def p50_ms(self) -> float | None:
        m = self._measured()
        return float(np.percentile(m, 50)) if m.size else None

    @property
    def p95_ms(self) -> float | None:
        m = self._measured()
        return float(np.percentile(m, 95)) if m.size else None

    @property
    def throughput_fps(self) -> float | None:
        mean = self.mean_ms
        return None if mean is None or mean <= 0.0 else 1000.0 / mean

    @property
    def meets_budget(self) -> bool | None:
        p95 = self.p95_ms
        return None if p95 is None else p95 <= self.budget_ms

    def count_histogram(self) -> dict[int, int]:
        hist: dict[int, int] = {}
        for c in self.marker_counts:
            hist[c] = hist.get(c, 0) + 1
        return dict(sorted(hist.items()))

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "processed_frames": self.processed_frames,
            "warmup": self.warmup,
            "frame_count": self.frame_count,
            "mean_ms": self.mean_ms,
            "p50_ms": self.p50_ms,
            "p95_ms": self.p95_ms,
            "throughput_fps": self.throughput_fps,
            "budget_ms": self.budget_ms,
            "meets_budget": self.meets_budget,
            "reference_ms": REFERENCE_MS,
            "marker_counts": self.marker_counts,
            "detection_counts": self.detection_counts,
            "wall_ms": self.wall_ms,
            "count_histogram": {str(k): v for k, v in self.count_histogram().items()},
        }

    def to_text(self) -> str:
        lines = [
            f"benchmark mode={self.mode}",
            f"frames processed:   {self.processed_frames} (warmup {self.warmup} discarded)",
        ]
        if self.frame_count == 0:
            lines.append("no measured frames")
            return "\n".join(lines) + "\n"
        counts = np.asarray(self.marker_counts)
        lines += [
            f"marker count:       min {counts.min()}  max {counts.max()}",
            f"latency mean:       {self.mean_ms:.3f} ms",
            f"latency p50:        {self.p50_ms:.3f} ms",
            f"latency p95:        {self.p95_ms:.3f} ms",
            f"throughput:         {self.throughput_fps:.1f} frames/s",
            f"budget (120 Hz):    {self.budget_ms:.2f} ms -> "
            f"{'within budget' if self.meets_budget else 'OVER BUDGET'}",
            f"reference point:    {REFERENCE_MS:.2f} ms (hardware-dependent, not asserted)",
        ]
        lines.append("count histogram:")
        for count, freq in self.count_histogram().items():
            lines.append(f"  {count:5d} markers x {freq} frames")
        return "\n".join(lines) + "\n"

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    def save_figure(self, path: str | Path, n_markers: int | None = None) -> None:
        """Render the counts-per-frame and latency curves to an image file."""
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, (ax_counts, ax_lat) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
        frames = np.arange(self.processed_frames)
        ax_counts.plot(frames, self.detection_counts, color="0.6", lw=0.8,
                       label="raw detections")
        ax_counts.plot(frames, self.marker_counts, color="tab:blue", lw=1.4,
                       label="reported markers")
        if n_markers is not None:
            ax_counts.axhline(n_markers, color="tab:green", ls="--", lw=1.0,
                              label=f"actual ({n_markers})")
        ax_counts.set_ylabel("markers per frame")
        ax_counts.legend(loc="best", fontsize=8)
        ax_counts.set_title(f"mode={self.mode}")

        ax_lat.plot(frames, self.wall_ms, color="tab:orange", lw=0.9)
        if self.p95_ms is not None:
            ax_lat.axhline(self.p95_ms, color="tab:red", ls=":", lw=1.0,
                           label=f"p95 = {self.p95_ms:.2f} ms")
        ax_lat.axhline(self.budget_ms, color="0.3", ls="--", lw=1.0,
                       label=f"120 Hz budget = {self.budget_ms:.2f} ms")
        if self.warmup:
            ax_lat.axvspan(0, min(self.warmup, self.processed_frames), color="0.9",
                           label=f"warmup ({self.warmup})")
        ax_lat.set_xlabel("frame")
        ax_lat.set_ylabel("latency (ms)")
        ax_lat.legend(loc="best", fontsize=8)

        fig.tight_layout()
        fig.savefig(path, dpi=110)
        plt.close(fig)


def bench_latency(
    runner: VariantRunner,
    frames: Iterable[GrayFrame],
    warmup: int = 10,
    on_result=None,
) -> BenchReport:
    """Process frames through ``runner``, timing each processing call.

    ``on_result`` (if given) receives each :class:`FrameResult` outside the
    timed region, e.g. to write the deviation stream during a benchmark run.
    """
    report = BenchReport(mode=runner.mode.value, warmup=warmup)
    for frame in frames:
        t0 = time.perf_counter()
        result: FrameResult = runner.process(frame)
        elapsed_ms = (time.perf_counter() - t0) * 1e3
        report.wall_ms.append(elapsed_ms)
        report.marker_counts.append(result.marker_count)
        report.detection_counts.append(result.detection_count)
        if on_result is not None:
            on_result(result)
    return report
