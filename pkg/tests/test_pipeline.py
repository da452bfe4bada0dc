import numpy as np
import pytest

from oracles import brute_force_blobs, flood_components, component_stats

from keytrack.errors import DimensionMismatch
from keytrack.layout import default_layout
from keytrack.pipeline import (
    BinaryMask,
    GrayFrame,
    PipelineConfig,
    acquire_measurements,
    detect_blobs,
    threshold,
    to_gray,
)
from keytrack.simulate import Uniform, render_frame, scenario_fig4, scenario_idle


def gray(pixels, timestamp=0.0):
    pixels = np.asarray(pixels, dtype=np.float32)
    return GrayFrame(width=pixels.shape[1], height=pixels.shape[0], pixels=pixels,
                     timestamp=timestamp)


def mask_of(bits):
    bits = np.asarray(bits, dtype=bool)
    return BinaryMask(width=bits.shape[1], height=bits.shape[0], bits=bits)


def wide_open(tau=0.5):
    return PipelineConfig(tau=tau, area_min=1, area_max=10 ** 9)


# --------------------------------------------------------------------------
# to_gray


def test_to_gray_white_and_black():
    img = np.zeros((2, 2, 3))
    img[0] = 1.0
    frame = to_gray(img)
    assert frame.pixels[0, 0] == 1.0
    assert frame.pixels[1, 1] == 0.0


def test_to_gray_pure_red_weight():
    img = np.zeros((1, 1, 3))
    img[0, 0, 0] = 1.0
    expected = 0.299 * 1.0 + 0.587 * 0.0 + 0.114 * 0.0
    assert abs(float(to_gray(img).pixels[0, 0]) - expected) < 1e-7


def test_to_gray_rejects_bad_shape():
    with pytest.raises(DimensionMismatch):
        to_gray(np.zeros((4, 4)))
    with pytest.raises(DimensionMismatch):
        to_gray(np.zeros((4, 4, 4)))


# --------------------------------------------------------------------------
# threshold


def test_threshold_strict_inequality():
    frame = gray([[0.2, 0.4], [0.8, 0.39999]])
    mask = threshold(frame, 0.4)
    assert mask.bits.tolist() == [[True, False], [False, True]]


def test_threshold_bright_frame_yields_no_blobs():
    frame = gray(np.full((32, 32), 0.8))
    mask = threshold(frame, 0.4)
    assert not mask.bits.any()
    assert len(detect_blobs(mask, wide_open())) == 0


def test_threshold_monotone_in_tau():
    rng = np.random.default_rng(7)
    frame = gray(rng.random((40, 40)).astype(np.float32))
    for lo, hi in [(0.2, 0.3), (0.3, 0.7), (0.05, 0.95)]:
        low = threshold(frame, lo).bits
        high = threshold(frame, hi).bits
        assert np.all(high[low])  # raising tau never un-marks a dark pixel


# --------------------------------------------------------------------------
# detect_blobs


def test_square_blob_centroid():
    bits = np.zeros((12, 12), dtype=bool)
    bits[4:7, 4:7] = True  # 3x3 square, center pixel (5, 5)
    blobs = detect_blobs(mask_of(bits), wide_open())
    assert len(blobs) == 1
    assert blobs.blobs[0].centroid == (5.5, 5.5)
    assert blobs.blobs[0].area == 9
    assert blobs.blobs[0].bbox == (4, 4, 6, 6)


def test_l_shape_centroid():
    bits = np.zeros((4, 4), dtype=bool)
    bits[0, 0] = bits[0, 1] = bits[1, 0] = True
    blobs = detect_blobs(mask_of(bits), wide_open())
    assert len(blobs) == 1
    (cx, cy), area, bbox = component_stats(flood_components(bits)[0])
    assert area == 3
    got = blobs.blobs[0]
    assert got.area == 3
    assert abs(got.centroid[0] - cx) <= 1e-9 and abs(got.centroid[1] - cy) <= 1e-9
    assert abs(cx - 2.5 / 3.0) <= 1e-12  # mean of {0.5, 1.5, 0.5}


def test_diagonal_is_one_component():
    bits = np.eye(6, dtype=bool)
    blobs = detect_blobs(mask_of(bits), wide_open())
    assert len(blobs) == 1  # 8-connectivity keeps the diagonal together


def test_border_components_kept():
    bits = np.zeros((8, 8), dtype=bool)
    bits[0, 0:3] = True
    bits[7, 5:8] = True
    assert len(detect_blobs(mask_of(bits), wide_open())) == 2


def test_area_gate_filters():
    bits = np.zeros((16, 16), dtype=bool)
    bits[1, 1] = True          # area 1
    bits[4:6, 4:6] = True      # area 4
    bits[8:12, 8:12] = True    # area 16
    cfg = PipelineConfig(tau=0.5, area_min=2, area_max=10)
    blobs = detect_blobs(mask_of(bits), cfg)
    assert [b.area for b in blobs.blobs] == [4]


def test_blob_order_is_scanline_discovery():
    bits = np.zeros((10, 10), dtype=bool)
    bits[6:8, 1:3] = True   # lower-left, discovered later
    bits[1:3, 6:8] = True   # upper-right, discovered first
    blobs = detect_blobs(mask_of(bits), wide_open())
    assert blobs.blobs[0].centroid[1] < blobs.blobs[1].centroid[1]


def test_centroids_match_brute_force_random_masks():
    rng = np.random.default_rng(123)
    for trial in range(40):
        bits = rng.random((28, 36)) < rng.uniform(0.05, 0.5)
        blobs = detect_blobs(mask_of(bits), wide_open())
        expected = brute_force_blobs(bits, 1, 10 ** 9)
        assert len(blobs) == len(expected)
        for got, (centroid, area, bbox) in zip(blobs.blobs, expected):
            assert got.area == area
            assert got.bbox == bbox
            assert abs(got.centroid[0] - centroid[0]) <= 1e-9
            assert abs(got.centroid[1] - centroid[1]) <= 1e-9


def test_partition_conserves_dark_pixels():
    rng = np.random.default_rng(5)
    for _ in range(10):
        bits = rng.random((30, 30)) < 0.3
        blobs = detect_blobs(mask_of(bits), wide_open())
        assert sum(b.area for b in blobs.blobs) == int(bits.sum())


def test_translation_equivariance():
    rng = np.random.default_rng(11)
    base = rng.random((12, 12)) < 0.3
    bits = np.zeros((40, 40), dtype=bool)
    bits[5:17, 5:17] = base
    blobs = detect_blobs(mask_of(bits), wide_open())
    for dx, dy in [(3, 0), (0, 4), (7, 9)]:
        shifted = np.zeros((40, 40), dtype=bool)
        shifted[5 + dy:17 + dy, 5 + dx:17 + dx] = base
        moved = detect_blobs(mask_of(shifted), wide_open())
        assert len(moved) == len(blobs)
        for a, b in zip(blobs.blobs, moved.blobs):
            assert abs(b.centroid[0] - a.centroid[0] - dx) <= 1e-9
            assert abs(b.centroid[1] - a.centroid[1] - dy) <= 1e-9


def test_determinism_identical_frames():
    frame, _ = render_frame(scenario_fig4(), 0)
    cfg = PipelineConfig.for_layout(default_layout())
    a = acquire_measurements(frame, cfg)
    b = acquire_measurements(frame, cfg)
    assert a.blobs == b.blobs


def test_centroid_inside_bbox():
    rng = np.random.default_rng(17)
    bits = rng.random((30, 30)) < 0.25
    for blob in detect_blobs(mask_of(bits), wide_open()).blobs:
        x0, y0, x1, y1 = blob.bbox
        assert x0 <= blob.centroid[0] <= x1 + 1
        assert y0 <= blob.centroid[1] <= y1 + 1


# --------------------------------------------------------------------------
# acquire_measurements


def test_acquire_all_white_empty():
    frame = gray(np.ones((64, 64)))
    blobs = acquire_measurements(frame, PipelineConfig())
    assert len(blobs) == 0


def test_acquire_hard_disk_area():
    yy, xx = np.mgrid[0:64, 0:64]
    inside = np.hypot(xx + 0.5 - 32.0, yy + 0.5 - 32.0) < 6.0
    frame = gray(np.where(inside, 0.0, 1.0))
    blobs = acquire_measurements(frame, PipelineConfig())
    assert len(blobs) == 1
    rasterized = int(inside.sum())
    assert blobs.blobs[0].area == rasterized
    assert abs(rasterized - np.pi * 36.0) / (np.pi * 36.0) < 0.05


def test_acquire_64_markers_recovered():
    scenario = scenario_idle(n_frames=1, noise_std=0.0)
    frame, _ = render_frame(scenario, 0)
    cfg = PipelineConfig.for_layout(scenario.layout)
    blobs = acquire_measurements(frame, cfg)
    assert len(blobs) == 64
    centroids = blobs.centroids_xy()
    x0 = scenario.layout.initial_positions_px
    d = np.sqrt(((np.sort(centroids, axis=0) - np.sort(x0, axis=0)) ** 2).sum(axis=1))
    assert d.max() <= 0.5


def test_acquire_clutter_exceeds_marker_count():
    scenario = scenario_fig4()
    frame, _ = render_frame(scenario, 0)
    cfg = PipelineConfig.for_layout(scenario.layout)
    assert len(acquire_measurements(frame, cfg)) > 64


def test_acquire_keeps_timestamp():
    frame = gray(np.ones((16, 16)), timestamp=2.5)
    assert acquire_measurements(frame, PipelineConfig()).frame_timestamp == 2.5


# --------------------------------------------------------------------------
# type validation


def test_grayframe_rejects_out_of_range():
    with pytest.raises(ValueError):
        gray(np.full((4, 4), 1.5))
    with pytest.raises(DimensionMismatch):
        GrayFrame(width=5, height=4, pixels=np.zeros((4, 4), dtype=np.float32))


def test_pipeline_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(tau=0.0)
    with pytest.raises(ValueError):
        PipelineConfig(area_min=10, area_max=5)
    cfg = PipelineConfig.for_layout(default_layout())
    assert cfg.area_min == pytest.approx(0.4 * np.pi * 36.0)
    assert cfg.area_max == pytest.approx(2.5 * np.pi * 36.0)
