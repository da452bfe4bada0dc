import io as std_io

import numpy as np
import pytest

from keytrack import io as kio
from keytrack.errors import StreamFormatError
from keytrack.pipeline import PipelineConfig
from keytrack.simulate import render_frame, scenario_uniform_shear, write_sequence
from keytrack.tracker import DeviationRecord, TrackStatus, init_tracker, track_frame


def sample_records():
    return [
        DeviationRecord(frame_index=3, timestamp=0.025, marker_id=0,
                        deviation=(0.125, -2.5), mean=(77.625, 75.0),
                        cov_trace=0.0012117, status=TrackStatus.ASSOCIATED),
        DeviationRecord(frame_index=3, timestamp=0.025, marker_id=1,
                        deviation=(0.1 + 0.2, 1e-17), mean=(0.0, 0.0),
                        cov_trace=0.5, status=TrackStatus.GATED),
        DeviationRecord(frame_index=4, timestamp=1.0 / 3.0, marker_id=2,
                        deviation=(0.0, 0.0), mean=(0.0, 0.0),
                        cov_trace=0.0, status=TrackStatus.NO_CANDIDATES),
    ]


def same_wire_fields(a: DeviationRecord, b: DeviationRecord) -> bool:
    return (a.frame_index == b.frame_index and a.timestamp == b.timestamp
            and a.marker_id == b.marker_id and a.deviation == b.deviation
            and a.cov_trace == b.cov_trace and a.status == b.status)


# --------------------------------------------------------------------------
# images


def test_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (37, 53), dtype=np.uint8)
    path = tmp_path / "img.pgm"
    kio.write_pgm(path, img)
    assert np.array_equal(kio.read_image(path), img)


def test_pgm_write_is_byte_deterministic(tmp_path):
    img = np.arange(64, dtype=np.uint8).reshape(8, 8)
    kio.write_pgm(tmp_path / "a.pgm", img)
    kio.write_pgm(tmp_path / "b.pgm", img)
    assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()


def test_ppm_read(tmp_path):
    img = np.zeros((4, 5, 3), dtype=np.uint8)
    img[..., 0] = 255
    path = tmp_path / "img.ppm"
    with open(path, "wb") as f:
        f.write(b"P6\n5 4\n255\n")
        f.write(img.tobytes())
    back = kio.read_image(path)
    assert back.shape == (4, 5, 3)
    assert np.array_equal(back, img)
    frame = kio.gray_from_u8(back)
    assert frame.pixels[0, 0] == pytest.approx(0.299, abs=1e-6)


def test_read_image_rejects_junk(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"JUNK")
    with pytest.raises(StreamFormatError):
        kio.read_image(path)


def test_read_image_rejects_truncated(tmp_path):
    path = tmp_path / "short.pgm"
    path.write_bytes(b"P5\n10 10\n255\n" + b"\0" * 50)
    with pytest.raises(StreamFormatError):
        kio.read_image(path)


def test_list_frame_files_sorted_numerically(tmp_path):
    for n in (10, 2, 1):
        kio.write_pgm(tmp_path / f"frame_{n:06d}.pgm", np.zeros((2, 2), np.uint8))
    names = [p.name for p in kio.list_frame_files(tmp_path)]
    assert names == ["frame_000001.pgm", "frame_000002.pgm", "frame_000010.pgm"]


def test_gray_from_u8_linear():
    frame = kio.gray_from_u8(np.array([[0, 128, 255]], dtype=np.uint8))
    assert frame.pixels[0, 0] == 0.0
    assert frame.pixels[0, 2] == 1.0
    assert frame.pixels[0, 1] == np.float32(128) / np.float32(255)


# --------------------------------------------------------------------------
# raw streams


def test_raw_stream_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    frames = [rng.integers(0, 256, (6, 7), dtype=np.uint8) for _ in range(3)]
    header = kio.RawHeader(width=7, height=6, channels=1, n_frames=3, fps=60.0)
    path = tmp_path / "seq.raw"
    kio.write_raw_sequence(path, header, frames)
    got = list(kio.iter_raw_frames(path))
    assert len(got) == 3
    for i, frame in enumerate(got):
        assert frame.timestamp == i / 60.0
        u8 = np.round(frame.pixels.astype(np.float64) * 255).astype(np.uint8)
        assert np.array_equal(u8, frames[i])


def test_raw_stream_three_channel(tmp_path):
    img = np.zeros((4, 5, 3), dtype=np.uint8)
    img[..., 0] = 255  # pure red -> luminance 0.299
    header = kio.RawHeader(width=5, height=4, channels=3, n_frames=1)
    path = tmp_path / "rgb.raw"
    kio.write_raw_sequence(path, header, [img])
    frames = list(kio.iter_raw_frames(path))
    assert len(frames) == 1
    assert frames[0].pixels[0, 0] == pytest.approx(0.299, abs=1e-6)


def test_raw_stream_truncation_detected(tmp_path):
    header = kio.RawHeader(width=4, height=4, channels=1, n_frames=2)
    path = tmp_path / "seq.raw"
    path.write_bytes(b"\0" * (16 + 7))  # second frame cut short
    kio.raw_sidecar_path(path).write_text(header.to_text())
    with pytest.raises(StreamFormatError):
        list(kio.iter_raw_frames(path))


def test_raw_header_parsing_errors():
    with pytest.raises(StreamFormatError):
        kio.parse_raw_header("not-a-header 1\nwidth 4\n")
    with pytest.raises(StreamFormatError):
        kio.parse_raw_header("keytrack-raw 1\nheight 4\n")  # width missing
    with pytest.raises(StreamFormatError):
        kio.parse_raw_header("keytrack-raw 1\nwidth 4\nheight 4\nchannels 2\n")


def test_stream_preamble_round_trip():
    header = kio.RawHeader(width=3, height=2, channels=1, fps=30.0)
    frame = np.arange(6, dtype=np.uint8).reshape(2, 3)
    buf = std_io.BytesIO(header.to_text().encode() + b"\n" + frame.tobytes())
    parsed = kio.read_stream_preamble(buf)
    assert parsed == header
    frames = list(kio.iter_raw_stream(buf, parsed))
    assert len(frames) == 1 and frames[0].timestamp == 0.0


# --------------------------------------------------------------------------
# record streams


def test_text_record_round_trip(tmp_path):
    records = sample_records()
    path = tmp_path / "dev.csv"
    with open(path, "w") as f:
        kio.write_records_text(f, records)
    back = kio.read_records_text(path)
    assert len(back) == len(records)
    for a, b in zip(records, back):
        assert same_wire_fields(a, b)


def test_binary_record_round_trip(tmp_path):
    records = sample_records()
    path = tmp_path / "dev.bin"
    with open(path, "wb") as f:
        kio.write_binary_stream_header(f)
        for rec in records:
            f.write(kio.pack_record(rec))
    back = kio.read_records_binary(path)
    assert len(back) == len(records)
    for a, b in zip(records, back):
        assert same_wire_fields(a, b)


def test_binary_record_is_40_bytes():
    assert kio.BINARY_RECORD.size == 40
    rec = sample_records()[0]
    assert len(kio.pack_record(rec)) == 40


def test_binary_stream_rejects_corruption(tmp_path):
    path = tmp_path / "dev.bin"
    path.write_bytes(b"WRONGMAGIC!!" + b"\0" * 8)
    with pytest.raises(StreamFormatError):
        kio.read_records_binary(path)
    path.write_bytes(kio.BINARY_STREAM_MAGIC + b"\x01\x00\x28\x00" + b"\0" * 17)
    with pytest.raises(StreamFormatError):
        kio.read_records_binary(path)


def test_text_record_rejects_bad_lines(tmp_path):
    path = tmp_path / "dev.csv"
    path.write_text(kio.TEXT_STREAM_HEADER + "\n1,0.0,3,badfields\n")
    with pytest.raises(StreamFormatError):
        kio.read_records_text(path)
    path.write_text("nonsense\n")
    with pytest.raises(StreamFormatError):
        kio.read_records_text(path)


# --------------------------------------------------------------------------
# truth files and manifests


def test_truth_round_trip(tmp_path):
    disp = np.array([[0.5, -1.25], [3.0, 0.0]])
    path = tmp_path / "truth.csv"
    with open(path, "w") as f:
        f.write(kio.TRUTH_HEADER + "\n")
        kio.write_truth(f, 0, disp)
        kio.write_truth(f, 1, disp * 2)
    table = kio.read_truth(path)
    assert table[(0, 0)] == (0.5, -1.25)
    assert table[(1, 1)] == (6.0, 0.0)


def test_write_sequence_layout_and_files(tmp_path):
    scenario = scenario_uniform_shear(n_frames=4)
    manifest = write_sequence(scenario, tmp_path / "seq")
    assert manifest.n_frames == 4
    assert manifest.layout_path.is_file()
    assert manifest.truth_path.is_file()
    for i in range(4):
        assert manifest.frame_path(i).is_file()
    again = kio.read_manifest(tmp_path / "seq")
    assert again == manifest


def test_write_sequence_byte_identical_rerun(tmp_path):
    scenario = scenario_uniform_shear(n_frames=3)
    m1 = write_sequence(scenario, tmp_path / "a")
    m2 = write_sequence(scenario, tmp_path / "b")
    for i in range(3):
        assert m1.frame_path(i).read_bytes() == m2.frame_path(i).read_bytes()
    assert m1.truth_path.read_bytes() == m2.truth_path.read_bytes()
    assert m1.layout_path.read_bytes() == m2.layout_path.read_bytes()


def test_round_trip_write_read_track_bit_exact(tmp_path):
    scenario = scenario_uniform_shear(n_frames=5)
    manifest = write_sequence(scenario, tmp_path / "seq")
    layout = manifest.load_layout()
    cfg = PipelineConfig.for_layout(layout)

    in_memory = []
    state = init_tracker(scenario.layout)
    for i in range(scenario.n_frames):
        frame, _ = render_frame(scenario, i)
        in_memory.extend(track_frame(state, frame, cfg))

    reloaded = []
    state2 = init_tracker(layout)
    for i in range(manifest.n_frames):
        u8 = kio.read_image(manifest.frame_path(i))
        frame = kio.gray_from_u8(u8, timestamp=i / manifest.fps)
        reloaded.extend(track_frame(state2, frame, cfg))

    assert in_memory == reloaded  # every field, bit for bit


def test_manifest_requires_file(tmp_path):
    with pytest.raises(StreamFormatError):
        kio.read_manifest(tmp_path)


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("KEYTRACK_THREADS", "2")
    assert kio.worker_count() == 2
    assert kio.worker_count(task_count=1) == 1
    monkeypatch.delenv("KEYTRACK_THREADS")
    assert kio.worker_count(task_count=3) <= 3
