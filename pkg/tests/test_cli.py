from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from sketchrender import harness
from sketchrender.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, build_parser, main, parse_seeds
from sketchrender.denoiser import Checkpoint, DenoiserConfig, init_params, flatten_params, load_checkpoint, save_checkpoint
from sketchrender.harness import ConfigError, RunConfig, load_config

TINY_DOC = {
    "data_size": 120,
    "sketch": {"widths": [32, 32]},
    "render": {"widths": [8]},
    "train": {"epochs": 1, "batch_size": 32, "warmup_steps": 2, "eval_every": 1},
}


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="session")
def tiny(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    cfg = root / "config.json"
    cfg.write_text(json.dumps(TINY_DOC))
    for role in ("sketch", "render"):
        assert main(["train", "--config", str(cfg), "--role", role, "--out", str(root / f"{role}.srdf")]) == EXIT_OK
    return root, cfg


def test_parse_seeds():
    assert parse_seeds("0-3") == [0, 1, 2, 3]
    assert parse_seeds("1,5,7-8") == [1, 5, 7, 8]
    for bad in ("", "a", "5-2"):
        with pytest.raises(ConfigError):
            parse_seeds(bad)


def test_config_round_trip_and_env(tmp_path):
    cfg = RunConfig.from_dict(TINY_DOC)
    again = RunConfig.from_dict(json.loads(cfg.to_json()))
    assert again == cfg
    p = tmp_path / "c.json"
    p.write_text(cfg.to_json())
    env = {harness.ENV_OUT_DIR: str(tmp_path / "o"), harness.ENV_WORKERS: "3"}
    loaded = load_config(p, env)
    assert loaded.out_dir == str(tmp_path / "o") and loaded.workers == 3
    assert load_config(None, {}).sketch.widths == (448, 448, 448)


@pytest.mark.parametrize(
    "doc",
    [{"bogus": 1}, {"workers": 0}, {"steps": 1}, {"mode": "euler"}, {"policies": {"x": "sometimes"}}, {"sketch": {"widths": [0]}}],
)
def test_bad_configs(doc, tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(ConfigError):
        load_config(p, {})
    assert main(["gen-data", "--config", str(p), "--out", str(tmp_path / "d")]) == EXIT_CONFIG


def test_bad_env_worker_count(tmp_path):
    with pytest.raises(ConfigError):
        load_config(None, {harness.ENV_WORKERS: "zero"})


def test_usage_errors_exit_two():
    with pytest.raises(SystemExit) as err:
        build_parser().parse_args(["bench", "--unknown"])
    assert err.value.code == EXIT_CONFIG
    with pytest.raises(SystemExit) as err:
        build_parser().parse_args([])
    assert err.value.code == EXIT_CONFIG


def test_gen_data(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["gen-data", "--n", "36", "--seed", "4", "--previews", "5", "--out", str(a)]) == EXIT_OK
    assert main(["gen-data", "--n", "36", "--seed", "4", "--previews", "5", "--out", str(b)]) == EXIT_OK
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert ma["data_sha256"] == mb["data_sha256"] and len(ma["previews"]) == 5
    assert all((a / f).read_bytes().startswith(b"P5") for f in ma["previews"])
    assert sum(ma["condition_counts"].values()) == 36
    main(["gen-data", "--n", "36", "--seed", "5", "--out", str(b)])
    assert json.loads((b / "manifest.json").read_text())["data_sha256"] != ma["data_sha256"]
    assert main(["gen-data", "--n", "0", "--out", str(tmp_path / "c")]) == EXIT_CONFIG


def test_train_outputs_share_fingerprint(tiny):
    root, _ = tiny
    a, b = load_checkpoint(root / "sketch.srdf"), load_checkpoint(root / "render.srdf")
    assert a.fingerprint == b.fingerprint
    assert a.metadata["role"] == "sketch" and a.metadata["steps"] > 0


def test_resume(tiny, tmp_path):
    root, cfg = tiny
    out = tmp_path / "resumed.srdf"
    assert main(["train", "--config", str(cfg), "--role", "render", "--resume", str(root / "render.srdf"), "--out", str(out)]) == EXIT_OK
    assert load_checkpoint(out).metadata["resumed_steps"] > 0
    # sketch architecture differs from the render checkpoint
    assert main(["train", "--config", str(cfg), "--role", "sketch", "--resume", str(root / "render.srdf"), "--out", str(out)]) == EXIT_CONFIG
    other = tmp_path / "other.json"
    other.write_text(json.dumps({**TINY_DOC, "data_seed": 9}))
    assert main(["train", "--config", str(other), "--role", "render", "--resume", str(root / "render.srdf"), "--out", str(out)]) == EXIT_CONFIG


def test_sample_commands(tiny, tmp_path):
    root, cfg = tiny
    sk, rd = str(root / "sketch.srdf"), str(root / "render.srdf")
    out = tmp_path / "never"
    assert main(["sample", "--config", str(cfg), "--sketch", sk, "--policy", "never", "--condition", "square:2", "--out", str(out)]) == EXIT_OK
    assert (out / "sample.pgm").exists() and json.loads((out / "trace.json").read_text())["switch_step"] is None
    assert main(["sample", "--config", str(cfg), "--sketch", sk, "--policy", "quality", "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    out = tmp_path / "adaptive"
    assert main(["sample", "--config", str(cfg), "--sketch", sk, "--render", rd, "--policy", "adaptive:delta=0.01,fix_step=5",
                 "--out", str(out)]) == EXIT_OK
    rows = _read_csv(out / "trace.csv")
    assert len(rows) == 50 and rows[0]["d_t"] == "" and all(r["d_t"] != "" for r in rows[1:])
    assert main(["sample", "--config", str(cfg), "--sketch", sk, "--condition", "hexagon:1", "--out", str(tmp_path / "y")]) == EXIT_CONFIG
    assert main(["sample", "--config", str(cfg), "--sketch", str(tmp_path / "missing.srdf"), "--out", str(tmp_path / "z")]) == EXIT_CONFIG


def test_runtime_abort_exit_code(tmp_path):
    cfg = DenoiserConfig(widths=(4,))
    p = init_params(cfg, 0)
    p["head.b"][:] = np.nan
    bad = tmp_path / "nan.srdf"
    save_checkpoint(Checkpoint(cfg, flatten_params(cfg, p)), bad)
    assert main(["sample", "--sketch", str(bad), "--out", str(tmp_path / "o")]) == EXIT_RUNTIME


def test_fingerprint_mismatch_is_config_error(tiny, tmp_path):
    root, cfg = tiny
    ck = load_checkpoint(root / "render.srdf")
    ck.fingerprint = "f" * 16
    odd = tmp_path / "odd.srdf"
    save_checkpoint(ck, odd)
    assert main(["sample", "--config", str(cfg), "--sketch", str(root / "sketch.srdf"), "--render", str(odd),
                 "--policy", "immediate", "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_trace_and_sweep(tiny, tmp_path):
    root, cfg = tiny
    out = tmp_path / "trace"
    assert main(["trace", "--config", str(cfg), "--sketch", str(root / "sketch.srdf"), "--seeds", "0-4", "--out", str(out)]) == EXIT_OK
    rows = _read_csv(out / "traces.csv")
    assert list(rows[0]) == list(harness.schema()["traces.csv"]["columns"])
    groups = {}
    for r in rows:
        groups.setdefault(r["run_id"], []).append(r)
    assert len(groups) == 60 and all(len(g) == 50 for g in groups.values())
    for g in groups.values():
        d = [float(r["d_t"]) if r["d_t"] else None for r in g]
        for i in range(2, 50):
            assert float(g[i]["d_deriv"]) == pytest.approx(d[i - 1] - d[i], abs=1e-12)
    assert (out / "dt_curves.png").stat().st_size > 0

    sweep = tmp_path / "sweep"
    assert main(["sweep-delta", "--traces", str(out / "traces.jsonl"), "--deltas", "0.002,0.01,0.03", "--out", str(sweep)]) == EXIT_OK
    summary = _read_csv(sweep / "sweep_summary.csv")
    medians = [float(r["median"]) for r in summary]
    assert medians == sorted(medians, reverse=True)
    raw = _read_csv(sweep / "switch_steps.csv")
    assert len(raw) == 3 * 60
    assert (sweep / "switch_steps.png").exists()
    assert main(["sweep-delta", "--traces", str(out / "traces.jsonl"), "--deltas", "", "--out", str(sweep)]) == EXIT_CONFIG


def test_bench(tiny, tmp_path):
    root, cfg = tiny
    out = tmp_path / "bench"
    assert main(["bench", "--config", str(cfg), "--sketch", str(root / "sketch.srdf"), "--render", str(root / "render.srdf"),
                 "--seeds", "0-3", "--out", str(out)]) == EXIT_OK
    rows = _read_csv(out / "bench.csv")
    labels = [r["label"] for r in rows]
    assert labels[:5] == ["never", "immediate", "fixed:step=10", "adaptive:delta=0.01,fix_step=5", "adaptive:delta=0.03,fix_step=5"]
    assert labels[5].endswith("(adaptive median)") and labels[6] == "render_only"
    assert list(rows[0]) == list(harness.schema()["bench.csv"]["columns"])
    assert rows[0]["psnr_saturated"] == "4" and float(rows[0]["measured_speedup"]) == 1.0
    for name in ("bench_runs.csv", "bench.json", "psnr_distribution.png", "speedup.png", "run_config.json"):
        assert (out / name).exists()


def test_perturb(tiny, tmp_path):
    root, cfg = tiny
    out = tmp_path / "p"
    assert main(["perturb", "--config", str(cfg), "--ckpt", str(root / "sketch.srdf"), "--bias", "0", "--sigma", "0",
                 "--seeds", "0-5", "--out", str(out)]) == EXIT_OK
    rows = _read_csv(out / "flip_rates.csv")
    assert [(r["window_lo"], r["window_hi"]) for r in rows] == [("0", "10"), ("10", "50")]
    assert all(r["flips"] == "0" for r in rows)
    assert (out / "grid_w0-10.pgm").exists() and (out / "perturb_grids.png").exists()
    assert main(["perturb", "--config", str(cfg), "--ckpt", str(root / "sketch.srdf"), "--window", "40:60",
                 "--seeds", "0", "--out", str(out)]) == EXIT_CONFIG


def test_worker_count_does_not_change_results(tiny, tmp_path):
    root, cfg = tiny
    outs = []
    for w in ("1", "3"):
        out = tmp_path / f"w{w}"
        assert main(["trace", "--config", str(cfg), "--sketch", str(root / "sketch.srdf"), "--seeds", "0-1",
                     "--workers", w, "--no-plots", "--out", str(out)]) == EXIT_OK
        outs.append([{k: v for k, v in r.items() if k != "wall_nanos"} for r in _read_csv(out / "traces.csv")])
    assert outs[0] == outs[1]


def test_rerun_reproduces_deterministic_columns(tiny, tmp_path):
    root, cfg = tiny
    docs = []
    for i in range(2):
        out = tmp_path / f"r{i}"
        main(["perturb", "--config", str(cfg), "--ckpt", str(root / "sketch.srdf"), "--seeds", "0-3", "--no-plots", "--out", str(out)])
        docs.append(((out / "flip_rates.csv").read_text(), (out / "perturb_runs.csv").read_text()))
    assert docs[0] == docs[1]


def test_schema_covers_every_writer():
    sch = harness.schema()
    assert list(sch["trace.csv"]["columns"]) == list(harness.TRACE_COLUMNS)
    assert list(sch["sweep_summary.csv"]["columns"]) == list(harness.SWEEP_COLUMNS)
    assert list(sch["switch_steps.csv"]["columns"]) == list(harness.SWEEP_RUN_COLUMNS)
    assert list(sch["bench_runs.csv"]["columns"]) == list(harness.BENCH_RUN_COLUMNS)
    assert list(sch["flip_rates.csv"]["columns"]) == list(harness.PERTURB_COLUMNS)
    assert list(sch["perturb_runs.csv"]["columns"]) == list(harness.PERTURB_RUN_COLUMNS)
    from sketchrender.metrics import REPORT_COLUMNS

    assert list(sch["bench.csv"]["columns"]) == list(REPORT_COLUMNS)
