import subprocess
import sys

import numpy as np
import pytest

from keytrack import io as kio
from keytrack.cli import main
from keytrack.layout import default_layout, load_layout, save_layout
from keytrack.pipeline import PipelineConfig
from keytrack.simulate import render_frame, scenario_uniform_shear, write_sequence
from keytrack.tracker import TrackStatus, init_tracker, track_frame


def wire_tuple(rec):
    return (rec.frame_index, rec.timestamp, rec.marker_id, rec.deviation,
            rec.cov_trace, rec.status)


@pytest.fixture(scope="module")
def shear_sequence(tmp_path_factory):
    scenario = scenario_uniform_shear(n_frames=6)
    out = tmp_path_factory.mktemp("seq")
    manifest = write_sequence(scenario, out)
    return scenario, manifest


def test_run_matches_library_bit_exact(shear_sequence, tmp_path):
    scenario, manifest = shear_sequence
    out = tmp_path / "dev.csv"
    code = main(["run", "--input", str(manifest.directory), "--output", str(out)])
    assert code == 0

    expected = []
    state = init_tracker(scenario.layout)
    cfg = PipelineConfig.for_layout(scenario.layout)
    for i in range(scenario.n_frames):
        frame, _ = render_frame(scenario, i)
        expected.extend(track_frame(state, frame, cfg))

    got = kio.read_records_text(out)
    assert len(got) == len(expected)
    for a, b in zip(got, expected):
        assert wire_tuple(a) == wire_tuple(b)


def test_run_binary_equals_text(shear_sequence, tmp_path):
    _, manifest = shear_sequence
    text_out = tmp_path / "dev.csv"
    bin_out = tmp_path / "dev.bin"
    assert main(["run", "--input", str(manifest.directory), "--output", str(text_out)]) == 0
    assert main(["run", "--input", str(manifest.directory), "--output", str(bin_out),
                 "--format", "binary"]) == 0
    text_records = kio.read_records_text(text_out)
    bin_records = kio.read_records_binary(bin_out)
    for a, b in zip(text_records, bin_records):
        assert wire_tuple(a) == wire_tuple(b)


def test_run_deterministic_across_runs(shear_sequence, tmp_path, monkeypatch):
    _, manifest = shear_sequence
    outs = []
    for name, threads in (("a.csv", "1"), ("b.csv", "4")):
        monkeypatch.setenv("KEYTRACK_THREADS", threads)
        out = tmp_path / name
        assert main(["run", "--input", str(manifest.directory), "--output", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]  # byte-identical regardless of decode parallelism


def test_run_single_blank_frame(tmp_path):
    layout = default_layout()
    seq = tmp_path / "blank"
    seq.mkdir()
    save_layout(layout, seq / "layout.txt")
    kio.write_pgm(seq / "frame_000000.pgm", np.full((400, 400), 255, np.uint8))
    kio.write_manifest(kio.SequenceManifest(
        directory=seq, layout_file="layout.txt", truth_file=None,
        frame_pattern="frame_{index:06d}.pgm", n_frames=1, fps=120.0, name="blank"))
    out = tmp_path / "dev.csv"
    assert main(["run", "--input", str(seq), "--frames", "1",
                 "--output", str(out)]) == 0
    records = kio.read_records_text(out)
    assert len(records) == 64
    assert all(r.status is TrackStatus.NO_CANDIDATES for r in records)
    assert all(r.deviation == (0.0, 0.0) for r in records)


def test_run_bare_directory_needs_layout(tmp_path):
    seq = tmp_path / "bare"
    seq.mkdir()
    kio.write_pgm(seq / "0.pgm", np.full((400, 400), 255, np.uint8))
    out = tmp_path / "dev.csv"
    assert main(["run", "--input", str(seq), "--output", str(out)]) == 1
    layout_file = tmp_path / "layout.txt"
    save_layout(default_layout(), layout_file)
    assert main(["run", "--input", str(seq), "--layout", str(layout_file),
                 "--output", str(out)]) == 0


def test_run_rejects_missing_input(tmp_path, capsys):
    assert main(["run", "--input", str(tmp_path / "nope"), "--output", "-"]) == 1
    assert "error" in capsys.readouterr().err


def test_run_rejects_layout_mismatch(shear_sequence, tmp_path, capsys):
    _, manifest = shear_sequence
    small = tmp_path / "small_layout.txt"
    from keytrack.layout import canonical_layout
    save_layout(canonical_layout(2, 2, origin_px=(50.0, 50.0),
                                 sensor_size_mm=(20.0, 20.0)), small)
    code = main(["run", "--input", str(manifest.directory), "--layout", str(small),
                 "--output", str(tmp_path / "dev.csv")])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_run_preset_with_bench(tmp_path):
    out = tmp_path / "dev.csv"
    code = main(["run", "--input", "idle", "--frames", "15", "--warmup", "5",
                 "--bench", "--output", str(out)])
    assert code == 0
    report = (tmp_path / "dev_bench.txt").read_text()
    assert "latency p95" in report
    assert (tmp_path / "dev_bench.json").is_file()
    assert (tmp_path / "dev_bench.png").is_file()
    import json
    data = json.loads((tmp_path / "dev_bench.json").read_text())
    assert data["processed_frames"] == 15
    assert data["frame_count"] == 10  # processed minus warmup
    assert len(kio.read_records_text(out)) == 15 * 64


def test_run_fig4_bench_curves(tmp_path):
    import json
    counts = {}
    for preset, mode in (("fig4:keyline", "keyline-filtered"),
                         ("fig4:keyline", "keyline-unfiltered"),
                         ("fig4:solid", "solid")):
        out = tmp_path / f"{mode}.csv"
        assert main(["run", "--input", preset, "--mode", mode, "--frames", "25",
                     "--warmup", "5", "--bench", "--output", str(out)]) == 0
        data = json.loads((tmp_path / f"{mode}_bench.json").read_text())
        counts[mode] = data["marker_counts"]
        assert (tmp_path / f"{mode}_bench.png").is_file()
    assert all(c == 64 for c in counts["keyline-filtered"])
    assert any(c > 64 for c in counts["keyline-unfiltered"])
    assert any(c < 64 for c in counts["solid"])


def test_run_bench_zero_frames(tmp_path):
    out = tmp_path / "dev.csv"
    code = main(["run", "--input", "idle", "--frames", "0", "--bench",
                 "--output", str(out)])
    assert code == 0
    assert kio.read_records_text(out) == []
    import json
    data = json.loads((tmp_path / "dev_bench.json").read_text())
    assert data["processed_frames"] == 0 and data["mean_ms"] is None


def test_run_bench_requires_file_output(capsys):
    assert main(["run", "--input", "idle", "--frames", "2", "--bench",
                 "--output", "-"]) == 1


def test_run_preset_rejects_layout_flag(tmp_path, capsys):
    layout_file = tmp_path / "layout.txt"
    save_layout(default_layout(), layout_file)
    assert main(["run", "--input", "idle", "--layout", str(layout_file),
                 "--output", "-"]) == 1


def test_run_raw_stream_input(tmp_path):
    scenario = scenario_uniform_shear(n_frames=3)
    frames_u8 = []
    for i in range(3):
        frame, _ = render_frame(scenario, i)
        frames_u8.append(np.round(frame.pixels.astype(np.float64) * 255).astype(np.uint8))
    raw = tmp_path / "seq.raw"
    kio.write_raw_sequence(raw, kio.RawHeader(width=400, height=400, n_frames=3), frames_u8)
    layout_file = tmp_path / "layout.txt"
    save_layout(scenario.layout, layout_file)
    out = tmp_path / "dev.csv"
    assert main(["run", "--input", str(raw), "--layout", str(layout_file),
                 "--output", str(out)]) == 0
    assert len(kio.read_records_text(out)) == 3 * 64


def test_simulate_cli(tmp_path):
    out_dir = tmp_path / "sim"
    assert main(["simulate", "--preset", "shear", "--frames", "3",
                 "--out", str(out_dir)]) == 0
    manifest = kio.read_manifest(out_dir)
    assert manifest.n_frames == 3
    assert manifest.load_layout().n_markers == 64


def test_layout_cli(tmp_path, capsys):
    out = tmp_path / "layout.txt"
    assert main(["layout", "--rows", "8", "--cols", "8", "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "PASS" in printed and "FAIL" not in printed
    assert load_layout(out).n_markers == 64

    assert main(["layout", "--gate", "30"]) == 1  # fails the ambiguity check
    assert "FAIL gate_ambiguity" in capsys.readouterr().out


def test_bad_arguments_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["run", "--mode", "bogus", "--input", "idle"])
    assert exc.value.code == 2


def test_stdin_streaming_matches_library(tmp_path):
    scenario = scenario_uniform_shear(n_frames=3)
    layout_file = tmp_path / "layout.txt"
    save_layout(scenario.layout, layout_file)

    header = kio.RawHeader(width=400, height=400, channels=1, fps=120.0)
    payload = bytearray(header.to_text().encode() + b"\n")
    for i in range(3):
        frame, _ = render_frame(scenario, i)
        payload += np.round(frame.pixels.astype(np.float64) * 255).astype(np.uint8).tobytes()

    proc = subprocess.run(
        [sys.executable, "-m", "keytrack.cli", "run", "--input", "-",
         "--layout", str(layout_file), "--output", "-"],
        input=bytes(payload), capture_output=True, timeout=120,
    )
    assert proc.returncode == 0, proc.stderr.decode()
    lines = proc.stdout.decode().strip().splitlines()
    assert lines[0] == kio.TEXT_STREAM_HEADER
    got = [kio.parse_record_text(ln) for ln in lines[1:]]

    expected = []
    state = init_tracker(scenario.layout)
    cfg = PipelineConfig.for_layout(scenario.layout)
    for i in range(3):
        frame, _ = render_frame(scenario, i)
        expected.extend(track_frame(state, frame, cfg))
    assert len(got) == len(expected)
    for a, b in zip(got, expected):
        assert wire_tuple(a) == wire_tuple(b)


def test_simulate_deterministic_across_thread_counts(tmp_path, monkeypatch):
    monkeypatch.setenv("KEYTRACK_THREADS", "1")
    assert main(["simulate", "--preset", "shear", "--frames", "3",
                 "--out", str(tmp_path / "one")]) == 0
    monkeypatch.setenv("KEYTRACK_THREADS", "4")
    assert main(["simulate", "--preset", "shear", "--frames", "3",
                 "--out", str(tmp_path / "four")]) == 0
    for i in range(3):
        a = (tmp_path / "one" / f"frame_{i:06d}.pgm").read_bytes()
        b = (tmp_path / "four" / f"frame_{i:06d}.pgm").read_bytes()
        assert a == b
