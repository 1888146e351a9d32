from __future__ import annotations

import json

import pytest

from dptune.cli import main, parse_bytes
from dptune.report import read_grid_csv


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "ds"
    assert main(["gen", "--out", str(out), "--items", "48", "--item-bytes", "300", "--seed", "1"]) == 0
    return out


def test_parse_bytes():
    assert parse_bytes("1GiB") == 2 ** 30
    assert parse_bytes("512MiB") == 512 * 2 ** 20
    assert parse_bytes("4096") == 4096
    assert parse_bytes("1.5KiB") == 1536


def test_gen_resolution(tmp_path, capsys):
    assert main(["gen", "--out", str(tmp_path / "d"), "--items", "3", "--resolution", "32"]) == 0
    out = capsys.readouterr().out
    assert "item_bytes=3072" in out
    assert "total_bytes=9216" in out


def test_gen_resolution_640_expansion(tmp_path, capsys):
    assert main(["gen", "--out", str(tmp_path / "d"), "--items", "1", "--resolution", "640"]) == 0
    assert "item_bytes=1228800" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [
        ["gen", "--items", "3", "--item-bytes", "4"],
        ["gen", "--out", "x", "--items", "0", "--item-bytes", "4"],
        ["gen", "--out", "x", "--items", "3", "--item-bytes", "4", "--resolution", "8"],
        ["bench"],
        ["tune", "--manifest", "m", "--objective", "fastest"],
        ["report"],
    ],
)
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2


def test_gen_io_failure_exit_1(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["gen", "--out", str(blocker / "d"), "--items", "2", "--item-bytes", "4"]) == 1


def test_bench_prints_epochs(dataset_dir, tmp_path, capsys):
    run = tmp_path / "bench"
    code = main(["bench", "--manifest", str(dataset_dir), "--workers", "6", "--prefetch", "2",
                 "--batch", "8", "--epochs", "2", "--run-dir", str(run)])
    out = capsys.readouterr().out
    assert code == 0
    assert out.count("epoch=") == 2
    assert "status=ok" in out
    rows = read_grid_csv(run / "grid.csv")
    assert [(r.n_worker, r.n_prefetch, r.epoch_index) for r in rows] == [(6, 2, 0), (6, 2, 1)]
    assert (run / "config.json").exists()


def test_bench_sink_overflow_exit_3(dataset_dir, tmp_path, capsys):
    code = main(["bench", "--manifest", str(dataset_dir), "--batch", "8", "--sink-budget", "1KiB",
                 "--run-dir", str(tmp_path / "b")])
    assert code == 3
    assert "status=sink_overflow" in capsys.readouterr().out


def test_bench_host_overflow_exit_3(dataset_dir, tmp_path, capsys):
    code = main(["bench", "--manifest", str(dataset_dir), "--host-budget", "100",
                 "--run-dir", str(tmp_path / "b")])
    assert code == 3
    assert "status=host_overflow" in capsys.readouterr().out


def test_bench_missing_manifest_exit_1(tmp_path):
    assert main(["bench", "--manifest", str(tmp_path / "nope"), "--run-dir", str(tmp_path / "b")]) == 1


def test_bench_realtime(dataset_dir, tmp_path, capsys):
    code = main(["bench", "--manifest", str(dataset_dir), "--workers", "2", "--prefetch", "1",
                 "--batch", "8", "--epochs", "1", "--mode", "realtime", "--run-dir", str(tmp_path / "b")])
    assert code == 0


def _tune(dataset_dir, run, *extra):
    return main(["tune", "--manifest", str(dataset_dir), "--batch", "8", "--epochs", "2",
                 "--run-dir", str(run), "--drain", "0.0002", *extra])


def test_tune_last_line_and_outputs(dataset_dir, tmp_path, capsys):
    run = tmp_path / "t"
    assert _tune(dataset_dir, run, "--cpus", "4", "--gpus", "1", "--max-prefetch", "2") == 0
    last = capsys.readouterr().out.strip().splitlines()[-1]
    doc = json.loads((run / "outcome.json").read_text())
    assert last == (f"nWorker={doc['n_worker']} nPrefetch={doc['n_prefetch']} "
                    f"optimal_time={doc['optimal_time_s']:.9f}s")
    assert "baseline" in doc
    for name in ("config.json", "grid.csv", "outcome.json", "run.log"):
        assert (run / name).exists()


def test_tune_cell_count(dataset_dir, tmp_path, capsys):
    run = tmp_path / "t"
    assert _tune(dataset_dir, run, "--cpus", "12", "--gpus", "1", "--max-prefetch", "4") == 0
    doc = json.loads((run / "outcome.json").read_text())
    assert len(doc["search_order"]) == 48


def test_tune_worker_multiples(dataset_dir, tmp_path, capsys):
    run = tmp_path / "t"
    assert _tune(dataset_dir, run, "--cpus", "12", "--gpus", "4", "--max-prefetch", "1") == 0
    doc = json.loads((run / "outcome.json").read_text())
    assert sorted({i for i, _ in doc["search_order"]}) == [4, 8, 12]


def test_tune_is_reproducible(dataset_dir, tmp_path, capsys):
    args = ("--cpus", "4", "--max-prefetch", "3", "--shuffle", "--seed", "9")
    assert _tune(dataset_dir, tmp_path / "a", *args) == 0
    assert _tune(dataset_dir, tmp_path / "b", *args) == 0
    for name in ("outcome.json", "grid.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_tune_infeasible_exit_4(dataset_dir, tmp_path, capsys):
    assert _tune(dataset_dir, tmp_path / "t", "--cpus", "2", "--host-budget", "10") == 4


def test_tune_respects_dpt_run_dir(dataset_dir, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("DPT_RUN_DIR", str(tmp_path / "root"))
    code = main(["tune", "--manifest", str(dataset_dir), "--cpus", "2", "--max-prefetch", "1",
                 "--epochs", "1"])
    assert code == 0
    runs = list((tmp_path / "root").iterdir())
    assert len(runs) == 1 and (runs[0] / "outcome.json").exists()


def test_report_with_baseline(dataset_dir, tmp_path, capsys):
    run = tmp_path / "t"
    assert _tune(dataset_dir, run, "--cpus", "8", "--max-prefetch", "2") == 0
    capsys.readouterr()
    assert main(["report", "--run", str(run)]) == 0
    out = capsys.readouterr().out
    assert "speedup" in out
    assert (run / "normalized.csv").exists()
    summary = (run / "summary.csv").read_text().splitlines()
    assert summary[0].endswith("gain_percent,speedup")
    assert len(summary) == 3


def test_report_single_prefetch_group(dataset_dir, tmp_path, capsys):
    run = tmp_path / "t"
    assert _tune(dataset_dir, run, "--cpus", "3", "--max-prefetch", "1") == 0
    assert main(["report", "--run", str(run)]) == 0
    rows = (run / "normalized.csv").read_text().splitlines()[1:]
    values = [float(r.split(",")[3]) for r in rows]
    assert max(values) == 1.0


def test_report_uses_baseline_run(dataset_dir, tmp_path, capsys):
    base = tmp_path / "base"
    assert main(["bench", "--manifest", str(dataset_dir), "--batch", "8", "--drain", "0.0002",
                 "--run-dir", str(base)]) == 0
    run = tmp_path / "t"
    assert _tune(dataset_dir, run, "--cpus", "4", "--gpus", "4", "--max-prefetch", "1") == 0
    (run / "outcome.json").unlink()
    capsys.readouterr()
    assert main(["report", "--run", str(run), "--baseline-run", str(base)]) == 0
    assert "after_2nd" in capsys.readouterr().out


def test_report_missing_run_exit_2(tmp_path):
    assert main(["report", "--run", str(tmp_path / "missing")]) == 2


def test_report_malformed_grid_exit_1(tmp_path, capsys):
    run = tmp_path / "r"
    run.mkdir()
    (run / "grid.csv").write_text("n_worker,n_prefetch,epoch,transfer_time_s,status\n1,1,zero,1,ok\n")
    assert main(["report", "--run", str(run)]) == 1
    assert "grid.csv:2" in capsys.readouterr().err
