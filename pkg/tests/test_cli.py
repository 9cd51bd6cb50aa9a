import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from idcorr.cli import main
from idcorr.dataset_io import NO_IDENTITY, read_dataset, read_header, read_truth
from idcorr.synthworld import evaluate


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture
def world(tmp_path):
    path = tmp_path / "w.bin"
    assert run("synth", path, "--seed", 3) == 0
    return path


def denoise(tmp_path, world, *extra, name="out.bin"):
    out = tmp_path / name
    assert run("denoise", world, out, *extra) == 0
    report = json.loads((tmp_path / f"{name}.report.json").read_text())
    return out, report


class TestSynth:
    def test_byte_identical(self, tmp_path):
        for name in ("a.bin", "b.bin"):
            assert run("synth", tmp_path / name, "--identities", 5, "--videos", 4, "--seed", 42) == 0
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
        assert (tmp_path / "a.bin.truth.json").read_bytes() == (tmp_path / "b.bin.truth.json").read_bytes()

    def test_header_count(self, tmp_path):
        run("synth", tmp_path / "a.bin", "--videos", 3, "--tracklets-per-video", 2,
            "--samples-per-tracklet", 9, "--dim", 6)
        assert read_header(tmp_path / "a.bin")[1:] == (3 * 2 * 9, 6)

    def test_clean_world_truth_f1(self, tmp_path, capsys):
        run("synth", tmp_path / "c.bin", "--contamination", 0)
        truth = tmp_path / "c.bin.truth.json"
        capsys.readouterr()
        assert run("eval", truth, truth) == 0
        assert json.loads(capsys.readouterr().out)["pairwise_f1"] == 1.0

    def test_invalid_spec(self, tmp_path, capsys):
        assert run("synth", tmp_path / "x.bin", "--contamination", 2) == 3
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "InvalidSpec"


class TestDenoise:
    def test_defaults_echoed(self, tmp_path, world):
        _, report = denoise(tmp_path, world)
        assert report["config"]["sigma_cst"] == 0.2
        assert report["config"]["sigma_drm"] == 0.18
        assert report["config"]["sliding_half_width"] == 1000
        assert report["config"]["min_tracklet_size"] == 2
        assert [s["name"] for s in report["stages"]] == ["ingest", "tracklet", "video", "cross"]
        assert report["samples_in"] == report["samples_out"] + report["samples_discarded"]
        for s in report["stages"]:
            assert s["samples_kept"] + s["samples_dropped"] == report["samples_in"]
            assert s["elapsed_ms"] >= 0 and "cluster_count" in s["noise"]

    def test_flags_echoed(self, tmp_path, world):
        _, report = denoise(tmp_path, world, "--sigma-cst", 0.3, "--sigma-drm", 0.1,
                            "--sliding-range", 5, "--min-tracklet-size", 3)
        assert report["config"] == {"sigma_cst": 0.3, "sigma_drm": 0.1, "sliding_half_width": 5,
                                    "min_tracklet_size": 3, "distance": "cosine"}

    def test_stage_tracklet_on_clean_world(self, tmp_path):
        run("synth", tmp_path / "c.bin", "--contamination", 0, "--spread", 0.05)
        out, report = denoise(tmp_path, tmp_path / "c.bin", "--stage", "tracklet")
        assert np.array_equal(read_dataset(out).tracklet_ids, read_dataset(tmp_path / "c.bin").tracklet_ids)
        assert [s["name"] for s in report["stages"]] == ["ingest", "tracklet"]

    def test_identity_count_matches_eval(self, tmp_path, world, capsys):
        out, report = denoise(tmp_path, world)
        capsys.readouterr()
        assert run("eval", out, f"{world}.truth.json") == 0
        ev = json.loads(capsys.readouterr().out)
        assert ev["identity_count_found"] == report["output_identities"]
        assert ev["pairwise_f1"] >= 0.95

    def test_output_keeps_rows_and_marks_drops(self, tmp_path, world):
        out, report = denoise(tmp_path, world)
        src, dst = read_dataset(world), read_dataset(out)
        assert np.array_equal(src.features, dst.features)
        assert np.array_equal(src.frames, dst.frames)
        assert int((dst.tracklet_ids == NO_IDENTITY).sum()) == report["samples_discarded"]

    def test_threads_identical(self, tmp_path, world):
        a, _ = denoise(tmp_path, world, "--threads", 1, name="a.bin")
        b, _ = denoise(tmp_path, world, "--threads", 8, name="b.bin")
        assert a.read_bytes() == b.read_bytes()

    def test_env_threads(self, tmp_path, world, monkeypatch):
        monkeypatch.setenv("CION_THREADS", "3")
        _, report = denoise(tmp_path, world)
        assert report["threads"] == 3

    def test_dump_edges(self, tmp_path, world):
        edges = tmp_path / "e.csv"
        _, report = denoise(tmp_path, world, "--dump-edges", edges)
        rows = list(csv.reader(edges.open()))
        assert rows[0] == ["i", "c", "distance"]
        assert len(rows) - 1 == report["stages"][-1]["edges"]
        for i, c, d in rows[1:]:
            assert int(i) < int(c) and float(d) <= 0.18 + 1e-9

    def test_truth_stage_metrics(self, tmp_path, world):
        stage_csv = tmp_path / "s.csv"
        _, report = denoise(tmp_path, world, "--truth", f"{world}.truth.json", "--stage-csv", stage_csv)
        f1 = [m["f1"] for m in report["stage_metrics"]]
        assert f1 == sorted(f1)
        assert stage_csv.read_text().splitlines()[0] == "stage,precision,recall,f1,identities"

    def test_report_path_and_no_noise(self, tmp_path, world):
        rep = tmp_path / "r.json"
        assert run("denoise", world, tmp_path / "o.bin", "--report", rep, "--no-noise") == 0
        doc = json.loads(rep.read_text())
        assert doc["schema"] == "idcorr.run_report/1"
        assert all("noise" not in s for s in doc["stages"])

    def test_malformed_input(self, tmp_path, capsys):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"CIONF1\0garbage")
        assert run("denoise", bad, tmp_path / "o.bin") == 3
        assert json.loads(capsys.readouterr().err)["error"] == "DatasetFormatError"

    def test_missing_input(self, tmp_path, capsys):
        assert run("denoise", tmp_path / "nope.bin", tmp_path / "o.bin") == 4
        assert json.loads(capsys.readouterr().err)["error"] == "FileNotFoundError"


class TestEval:
    def test_universe_mismatch(self, tmp_path, world, capsys):
        run("synth", tmp_path / "small.bin", "--videos", 1)
        assert run("eval", world, tmp_path / "small.bin.truth.json") == 3
        assert json.loads(capsys.readouterr().err)["error"] == "UniverseMismatch"

    def test_eval_matches_library(self, tmp_path, world, capsys):
        out, _ = denoise(tmp_path, world)
        capsys.readouterr()
        run("eval", out, f"{world}.truth.json", "--noise")
        doc = json.loads(capsys.readouterr().out)
        labels = read_dataset(out).tracklet_ids.astype(np.int64)
        labels[labels == NO_IDENTITY] = -1
        want = evaluate(labels, read_truth(f"{world}.truth.json"))
        assert doc["pairwise_f1"] == want.pairwise_f1
        assert doc["noise_after"] is not None


class TestBench:
    def test_counts(self, capsys):
        assert run("bench", "--n-tracklets", 1000, "--sliding-range", 10, "--steps", 2) == 0
        rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
        assert [int(r["n"]) for r in rows] == [500, 1000]
        last = rows[-1]
        assert int(last["sliding_evaluations"]) == 9945
        assert int(last["brute_evaluations"]) == 499500


class TestDistillToy:
    def test_trace(self, tmp_path, capsys):
        out = tmp_path / "t.csv"
        assert run("distill-toy", "--epochs", 3, "--seed", 1, "-o", out) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "epoch,loss,precision_at_1,n_id" and len(lines) == 4
        info = json.loads(capsys.readouterr().err)
        assert 0 <= info["initial_precision_at_1"] <= 1

    def test_zero_epochs(self, capsys):
        assert run("distill-toy", "--epochs", 0) == 0
        assert capsys.readouterr().out == "epoch,loss,precision_at_1,n_id\n"

    def test_repeatable(self, tmp_path):
        for name in ("a.csv", "b.csv"):
            run("distill-toy", "--epochs", 2, "--seed", 5, "--nid-schedule", "2,0.5:4", "-o", tmp_path / name)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "idcorr", "synth", str(tmp_path / "m.bin"), "--videos", "1"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "m.bin").exists()
