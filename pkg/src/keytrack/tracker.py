"""Per-marker Kalman tracking with nearest-neighbor association and gating.

Each marker gets one filter over its 2-D position. The motion model is a
random walk (identity dynamics, isotropic process noise) and measurements
observe position directly, so prediction and update stay tiny:

    predict:  mean unchanged,            P <- P + sigma_w^2 * I
    update:   K = P (P + sigma_v^2 I)^-1, mean <- mean + K (z - mean),
              P <- (I - K) P

For isotropic P = p*I the gain collapses to the scalar k = p / (p + sigma_v^2);
the general 2x2 path exists for covariances that arrive non-isotropic.

Association follows the per-marker rule: each track takes its nearest
candidate within the gate, independently of other tracks. It runs after
prediction, but the random walk leaves the predicted mean equal to the
previous posterior, so matching against the prediction is exactly matching
against the last estimate. Two tracks may claim the same blob; shared picks
are counted per frame rather than resolved, and a layout whose pitch
exceeds twice the gate cannot produce cross-marker ambiguity in the first
place. A track that gates out (or sees no candidates at all) keeps its
prediction, so its covariance grows until the marker reappears.

Deviations are reported against each marker's initial position:
delta = posterior mean - initial position, exactly.

State is stored as packed arrays for frame-rate processing; the per-track
operations (:func:`predict`, :func:`associate`, :func:`update`) work on
:class:`MarkerTrack` views and compute the identical floating-point
operations as the batched frame step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np

from .errors import LayoutInvalid
from .layout import MarkerLayout, validate_layout
from .pipeline import BlobSet, GrayFrame, PipelineConfig, acquire_measurements

logger = logging.getLogger(__name__)

DEFAULT_SIGMA_W = 0.1
DEFAULT_SIGMA_V = 0.025
DEFAULT_GATE_FRACTION = 0.45  # of the marker pitch, keeping gates below half-pitch

_I2 = np.eye(2, dtype=np.float64)


class TrackStatus(IntEnum):
    """Outcome of the association step for one track in one frame."""

    ASSOCIATED = 0
    GATED = 1           # candidates existed but none inside the gate
    NO_CANDIDATES = 2   # empty candidate set

    @property
    def wire_name(self) -> str:
        return _STATUS_NAMES[self]


_STATUS_NAMES = {
    TrackStatus.ASSOCIATED: "associated",
    TrackStatus.GATED: "gated",
    TrackStatus.NO_CANDIDATES: "no_candidates",
}
STATUS_BY_NAME = {v: k for k, v in _STATUS_NAMES.items()}


@dataclass(frozen=True)
class NoiseParams:
    """Process / measurement noise standard deviations, in pixels."""

    sigma_w: float = DEFAULT_SIGMA_W
    sigma_v: float = DEFAULT_SIGMA_V

    def __post_init__(self) -> None:
        if self.sigma_w <= 0.0 or self.sigma_v <= 0.0:
            raise ValueError(f"noise stds must be positive, got ({self.sigma_w}, {self.sigma_v})")


@dataclass(frozen=True)
class MarkerTrack:
    """Posterior state of one marker's filter."""

    id: int
    x0: np.ndarray    # (2,) initial position
    mean: np.ndarray  # (2,) posterior mean
    cov: np.ndarray   # (2, 2) posterior covariance
    last_status: TrackStatus = TrackStatus.NO_CANDIDATES

    def __post_init__(self) -> None:
        for name in ("x0", "mean", "cov"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=np.float64))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.x0.shape != (2,) or self.mean.shape != (2,) or self.cov.shape != (2, 2):
            raise ValueError("track needs 2-vector positions and a 2x2 covariance")
        if not np.all(np.isfinite(self.mean)):
            raise ValueError("track mean must be finite")
        c = self.cov
        if abs(c[0, 1] - c[1, 0]) > 1e-9:
            raise ValueError("covariance must be symmetric")
        # Closed-form smallest eigenvalue of a symmetric 2x2.
        half_tr = 0.5 * (c[0, 0] + c[1, 1])
        radius = math.hypot(0.5 * (c[0, 0] - c[1, 1]), c[0, 1])
        if half_tr - radius < -1e-12:
            raise ValueError(f"covariance must be PSD, min eigenvalue {half_tr - radius}")

    @property
    def deviation(self) -> np.ndarray:
        return self.mean - self.x0


@dataclass
class TrackerState:
    """Filter bank over all markers of one layout, stored as packed arrays.

    Single-owner mutable: apply frames strictly in order from one logical
    owner. Use :attr:`tracks` / :meth:`track` for per-marker views and
    :meth:`set_track` to write a view back. The per-frame
    ``last_shared_associations`` count is diagnostic only.
    """

    layout: MarkerLayout
    noise: NoiseParams
    gate_radius_px: float
    x0: np.ndarray        # (n, 2) float64
    means: np.ndarray     # (n, 2) float64
    covs: np.ndarray      # (n, 2, 2) float64
    statuses: np.ndarray  # (n,) int8 of TrackStatus values
    frame_index: int = 0
    last_shared_associations: int = 0

    @property
    def n_markers(self) -> int:
        return self.layout.n_markers

    def track(self, marker_id: int) -> MarkerTrack:
        return MarkerTrack(
            id=marker_id,
            x0=self.x0[marker_id].copy(),
            mean=self.means[marker_id].copy(),
            cov=self.covs[marker_id].copy(),
            last_status=TrackStatus(int(self.statuses[marker_id])),
        )

    @property
    def tracks(self) -> list[MarkerTrack]:
        return [self.track(i) for i in range(self.n_markers)]

    def set_track(self, marker_id: int, track: MarkerTrack) -> None:
        self.means[marker_id] = track.mean
        self.covs[marker_id] = track.cov
        self.statuses[marker_id] = int(track.last_status)


@dataclass(frozen=True)
class DeviationRecord:
    """Per-frame, per-marker output row."""

    frame_index: int
    timestamp: float
    marker_id: int
    deviation: tuple[float, float]
    mean: tuple[float, float]
    cov_trace: float
    status: TrackStatus


def init_tracker(
    layout: MarkerLayout,
    noise: NoiseParams | None = None,
    gate_radius_px: float | None = None,
    p0: float | None = None,
) -> TrackerState:
    """Create one filter per marker, seeded at the fabrication positions.

    Defaults: noise (0.1, 0.025) px, gate 0.45 * pitch, p0 = sigma_v^2.
    Raises :class:`LayoutInvalid` when the layout fails validation for the
    chosen gate.
    """
    noise = noise if noise is not None else NoiseParams()
    if gate_radius_px is None:
        gate_radius_px = DEFAULT_GATE_FRACTION * layout.spacing_px
    if gate_radius_px <= 0.0:
        raise ValueError(f"gate radius must be positive, got {gate_radius_px}")
    if p0 is None:
        p0 = noise.sigma_v ** 2
    if p0 < 0.0:
        raise ValueError(f"p0 must be >= 0, got {p0}")

    report = validate_layout(layout, layout.frame_size_px, gate_radius_px)
    if not report.ok:
        details = "; ".join(f"{c.name}: {c.detail}" for c in report.failures())
        raise LayoutInvalid(f"layout rejected for gate {gate_radius_px} px ({details})")

    n = layout.n_markers
    x0 = layout.initial_positions_px.copy()
    covs = np.zeros((n, 2, 2), dtype=np.float64)
    covs[:, 0, 0] = p0
    covs[:, 1, 1] = p0
    return TrackerState(
        layout=layout,
        noise=noise,
        gate_radius_px=float(gate_radius_px),
        x0=x0,
        means=x0.copy(),
        covs=covs,
        statuses=np.full(n, int(TrackStatus.NO_CANDIDATES), dtype=np.int8),
    )


def predict(track: MarkerTrack, noise: NoiseParams) -> MarkerTrack:
    """Random-walk prediction: mean unchanged, covariance inflated."""
    return replace(track, cov=track.cov + (noise.sigma_w ** 2) * _I2)


def _nearest(centroids: np.ndarray, point: np.ndarray) -> tuple[int, float]:
    """Index and squared distance of the centroid nearest ``point``.

    np.argmin returns the first minimum, so ties resolve to the lowest blob
    index and the choice is deterministic.
    """
    d2 = np.sum((centroids - point) ** 2, axis=1)
    best = int(np.argmin(d2))
    return best, float(d2[best])


def associate(
    track: MarkerTrack,
    candidates: BlobSet,
    gate_radius_px: float,
) -> tuple[np.ndarray | None, TrackStatus]:
    """Pick the candidate centroid nearest the track's predicted mean.

    Returns (measurement, status); the measurement is None when the set is
    empty or the nearest candidate lies beyond the gate.
    """
    if len(candidates) == 0:
        return None, TrackStatus.NO_CANDIDATES
    centroids = candidates.centroids_xy()
    best, d2 = _nearest(centroids, track.mean)
    if d2 > gate_radius_px * gate_radius_px:
        return None, TrackStatus.GATED
    return centroids[best], TrackStatus.ASSOCIATED


def _is_isotropic(cov: np.ndarray) -> bool:
    return cov[0, 1] == 0.0 and cov[1, 0] == 0.0 and cov[0, 0] == cov[1, 1]


def update(track: MarkerTrack, z: np.ndarray, noise: NoiseParams) -> MarkerTrack:
    """Measurement update with identity observation and R = sigma_v^2 * I."""
    z = np.asarray(z, dtype=np.float64)
    r = noise.sigma_v ** 2
    cov = track.cov
    if _is_isotropic(cov):
        p = cov[0, 0]
        k = p / (p + r)
        mean = track.mean + k * (z - track.mean)
        new_cov = ((1.0 - k) * p) * _I2
    else:
        s = cov + r * _I2
        det = s[0, 0] * s[1, 1] - s[0, 1] * s[1, 0]
        assert det > 0.0, "innovation covariance singular despite sigma_v > 0"
        s_inv = np.array([[s[1, 1], -s[0, 1]], [-s[1, 0], s[0, 0]]], dtype=np.float64) / det
        gain = cov @ s_inv
        mean = track.mean + gain @ (z - track.mean)
        new_cov = (_I2 - gain) @ cov
        new_cov = 0.5 * (new_cov + new_cov.T)  # clamp symmetry drift
    return replace(track, mean=mean, cov=new_cov)


def step_track(track: MarkerTrack, candidates: BlobSet, noise: NoiseParams,
               gate_radius_px: float) -> MarkerTrack:
    """predict -> associate -> (update | hold prediction) for one track."""
    predicted = predict(track, noise)
    z, status = associate(predicted, candidates, gate_radius_px)
    if z is not None:
        stepped = update(predicted, z, noise)
    else:
        stepped = predicted
    return replace(stepped, last_status=status)


def track_frame(
    state: TrackerState,
    frame: GrayFrame,
    pipeline: PipelineConfig,
) -> list[DeviationRecord]:
    """Advance the filter bank by one frame and emit one record per marker.

    Always emits exactly ``layout.n_markers`` records, in marker-id order,
    no matter what the frame contains.
    """
    w, h = state.layout.frame_size_px
    if (frame.width, frame.height) != (w, h):
        raise LayoutInvalid(
            f"frame is {frame.width}x{frame.height} px but layout expects {w}x{h}"
        )
    candidates = acquire_measurements(frame, pipeline)
    return track_candidates(state, candidates)


def track_candidates(state: TrackerState, candidates: BlobSet) -> list[DeviationRecord]:
    """Core per-frame step once candidates are in hand."""
    covs = state.covs
    isotropic = bool(np.all((covs[:, 0, 1] == 0.0) & (covs[:, 1, 0] == 0.0)
                            & (covs[:, 0, 0] == covs[:, 1, 1])))
    if isotropic:
        means, p_post, statuses, shared = _step_isotropic(state, candidates)
        state.means = means
        covs = np.zeros((state.n_markers, 2, 2), dtype=np.float64)
        covs[:, 0, 0] = p_post
        covs[:, 1, 1] = p_post
        state.covs = covs
        state.statuses = statuses
        traces = p_post + p_post
    else:
        shared = _step_generic(state, candidates)
        traces = state.covs[:, 0, 0] + state.covs[:, 1, 1]

    state.last_shared_associations = shared
    if shared:
        logger.debug("frame %d: %d blob(s) claimed by multiple tracks",
                     state.frame_index, shared)

    frame_index = state.frame_index
    state.frame_index += 1
    ts = candidates.frame_timestamp
    dev = state.means - state.x0
    records = []
    for i in range(state.n_markers):
        records.append(DeviationRecord(
            frame_index=frame_index,
            timestamp=ts,
            marker_id=i,
            deviation=(dev[i, 0].item(), dev[i, 1].item()),
            mean=(state.means[i, 0].item(), state.means[i, 1].item()),
            cov_trace=traces[i].item(),
            status=TrackStatus(int(state.statuses[i])),
        ))
    return records


def _step_isotropic(
    state: TrackerState, candidates: BlobSet,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Batched predict/associate/update over all tracks with P = p*I.

    Performs scalar-for-scalar the same IEEE operations as the per-track
    functions, just elementwise over the bank.
    """
    n = state.n_markers
    r = state.noise.sigma_v ** 2
    p_pred = state.covs[:, 0, 0] + state.noise.sigma_w ** 2
    means = state.means

    if len(candidates) == 0:
        statuses = np.full(n, int(TrackStatus.NO_CANDIDATES), dtype=np.int8)
        return means, p_pred, statuses, 0

    centroids = candidates.centroids_xy()
    d2 = np.sum((centroids[None, :, :] - means[:, None, :]) ** 2, axis=2)
    best = np.argmin(d2, axis=1)
    best_d2 = d2[np.arange(n), best]
    assoc = ~(best_d2 > state.gate_radius_px * state.gate_radius_px)

    z = centroids[best]
    k = p_pred / (p_pred + r)
    updated_means = means + k[:, None] * (z - means)
    new_means = np.where(assoc[:, None], updated_means, means)
    new_p = np.where(assoc, (1.0 - k) * p_pred, p_pred)
    statuses = np.where(assoc, int(TrackStatus.ASSOCIATED),
                        int(TrackStatus.GATED)).astype(np.int8)

    claimed = np.bincount(best[assoc], minlength=len(candidates))
    shared = int(np.count_nonzero(claimed > 1))
    return new_means, new_p, statuses, shared


def _step_generic(state: TrackerState, candidates: BlobSet) -> int:
    """Per-track fallback for non-isotropic covariances. Returns shared count."""
    picks: dict[int, int] = {}
    centroids = candidates.centroids_xy() if len(candidates) else None
    gate2 = state.gate_radius_px * state.gate_radius_px
    for i in range(state.n_markers):
        predicted = predict(state.track(i), state.noise)
        if centroids is None:
            status, stepped = TrackStatus.NO_CANDIDATES, predicted
        else:
            best, d2 = _nearest(centroids, predicted.mean)
            if d2 > gate2:
                status, stepped = TrackStatus.GATED, predicted
            else:
                status = TrackStatus.ASSOCIATED
                picks[best] = picks.get(best, 0) + 1
                stepped = update(predicted, centroids[best], state.noise)
        state.set_track(i, replace(stepped, last_status=status))
    return sum(1 for count in picks.values() if count > 1)


def raw_detection_count(frame: GrayFrame, pipeline: PipelineConfig) -> int:
    """|Z_t| for the unfiltered benchmark curves."""
    return len(acquire_measurements(frame, pipeline))


def match_nearest_initial(
    layout: MarkerLayout,
    candidates: BlobSet,
    frame_index: int = 0,
) -> list[DeviationRecord]:
    """Stateless baseline: assign every blob to its nearest initial position.

    No prediction, no gating, no memory. A marker claimed by several blobs
    reports the closest one; an unclaimed marker reports zero deviation with
    NO_CANDIDATES status. cov_trace is 0 because no filter exists here.
    """
    n = layout.n_markers
    best_d2 = np.full(n, np.inf)
    best_xy = np.zeros((n, 2), dtype=np.float64)
    if len(candidates) > 0:
        centroids = candidates.centroids_xy()
        x0 = layout.initial_positions_px
        d2 = np.sum((centroids[:, None, :] - x0[None, :, :]) ** 2, axis=-1)
        owners = np.argmin(d2, axis=1)  # blob -> nearest marker
        for blob_index, marker in enumerate(owners):
            if d2[blob_index, marker] < best_d2[marker]:
                best_d2[marker] = d2[blob_index, marker]
                best_xy[marker] = centroids[blob_index]

    records = []
    for i in range(n):
        if np.isfinite(best_d2[i]):
            mean = best_xy[i]
            status = TrackStatus.ASSOCIATED
        else:
            mean = layout.initial_positions_px[i]
            status = TrackStatus.NO_CANDIDATES
        dev = mean - layout.initial_positions_px[i]
        records.append(DeviationRecord(
            frame_index=frame_index,
            timestamp=candidates.frame_timestamp,
            marker_id=i,
            deviation=(float(dev[0]), float(dev[1])),
            mean=(float(mean[0]), float(mean[1])),
            cov_trace=0.0,
            status=status,
        ))
    return records
