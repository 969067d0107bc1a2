"""``sketchrender`` command line.

Exit codes: 0 success, 2 configuration or usage error, 3 runtime abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import harness
from .dataset import Condition, all_conditions
from .denoiser import CheckpointError, TrainingDivergedError
from .harness import ConfigError, RunConfig
from .pipeline import SamplingAbortedError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

log = logging.getLogger("sketchrender")


def parse_seeds(text: str) -> list[int]:
    """``"0-4"`` -> [0..4]; ``"1,5,9"`` -> [1, 5, 9]; ranges and lists mix."""
    seeds: list[int] = []
    try:
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            if "-" in part:
                lo, hi = part.split("-", 1)
                a, b = int(lo), int(hi)
                if b < a:
                    raise ValueError
                seeds.extend(range(a, b + 1))
            else:
                seeds.append(int(part))
    except ValueError:
        raise ConfigError(f"bad seed list {text!r}") from None
    if not seeds:
        raise ConfigError("seed list is empty")
    return seeds


def parse_deltas(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad delta list {text!r}") from None
    if not vals:
        raise ConfigError("delta list is empty")
    if any(not v > 0 for v in vals):
        raise ConfigError("deltas must be positive")
    return vals


def parse_window(text: str) -> tuple[int, int]:
    try:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    except ValueError:
        raise ConfigError(f"window must look like LO:HI, got {text!r}") from None


def read_conditions(path: str | None) -> list[Condition]:
    if path is None:
        return all_conditions()
    try:
        lines = Path(path).read_text().splitlines()
    except FileNotFoundError:
        raise ConfigError(f"conditions file {path} not found") from None
    try:
        conds = [Condition.parse(ln.strip()) for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not conds:
        raise ConfigError(f"{path} lists no conditions")
    return conds


def _out(args, cfg: RunConfig, name: str) -> Path:
    out = Path(args.out) if args.out else Path(cfg.out_dir) / name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _ckpt(path: str | None, role: str) -> str:
    return path if path else str(harness.shipped_checkpoint(role))


def _args_doc(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


# --------------------------------------------------------------------------- commands

def cmd_gen_data(args, cfg: RunConfig) -> int:
    out = _out(args, cfg, "data")
    manifest = harness.gen_data(args.n, args.seed, out, args.previews)
    print(f"wrote {len(manifest['previews'])} previews and manifest.json to {out} (sha256 {manifest['data_sha256'][:12]})")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    out = Path(args.out) if args.out else Path(cfg.out_dir) / f"{args.role}.srdf"
    ckpt = harness.train_role(cfg, args.role, out, resume=args.resume, progress=args.verbose)
    m = ckpt.metadata
    print(f"{args.role}: {m['steps']} steps, val mse {m['untrained_val_mse']} -> {m['final_val_mse']}; "
          f"fingerprint {ckpt.fingerprint}; wrote {out}")
    return EXIT_OK


def cmd_sample(args, cfg: RunConfig) -> int:
    out = _out(args, cfg, "sample")
    try:
        cond = Condition.parse(args.condition)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    render = args.render
    if render is None and args.shipped_render:
        render = str(harness.shipped_checkpoint("render"))
    _, tr = harness.sample_one(cfg, _ckpt(args.sketch, "sketch"), render, args.policy, cond, args.seed, out)
    harness.save_run_config(cfg, out, "sample", _args_doc(args))
    print(f"{tr.run_id}: switch_step={tr.switch_step} flops={tr.total_flops} wall={tr.total_wall_nanos / 1e6:.2f} ms; wrote {out}")
    return EXIT_OK


def cmd_trace(args, cfg: RunConfig) -> int:
    out = _out(args, cfg, "trace")
    traces = harness.trace_runs(cfg, _ckpt(args.sketch, "sketch"), read_conditions(args.conditions), parse_seeds(args.seeds))
    harness.write_traces(traces, out)
    harness.save_run_config(cfg, out, "trace", _args_doc(args))
    if not args.no_plots:
        from . import plotting

        plotting.dt_curves(traces, out / "dt_curves.png")
    print(f"{len(traces)} traces written to {out / 'traces.csv'}")
    return EXIT_OK


def cmd_sweep_delta(args, cfg: RunConfig) -> int:
    deltas = parse_deltas(args.deltas)
    out = _out(args, cfg, "sweep")
    if args.traces:
        traces = harness.read_traces(args.traces)
    else:
        traces = harness.trace_runs(cfg, _ckpt(args.sketch, "sketch"), read_conditions(args.conditions), parse_seeds(args.seeds))
        harness.write_traces(traces, out)
    raw, summary = harness.sweep_delta(traces, deltas, args.fix_step)
    harness.write_sweep(raw, summary, out)
    harness.save_run_config(cfg, out, "sweep-delta", _args_doc(args))
    if not args.no_plots:
        from . import plotting

        plotting.switch_boxplot(raw, out / "switch_steps.png")
    for row in summary:
        print(f"delta={row['delta']:g}: median {row['median']:g} (q1 {row['q1']:g}, q3 {row['q3']:g}) over {row['count']}")
    return EXIT_OK


def cmd_bench(args, cfg: RunConfig) -> int:
    out = _out(args, cfg, "bench")
    policies = args.policy or list(harness.DEFAULT_BENCH_POLICIES)
    result = harness.bench(
        cfg, _ckpt(args.sketch, "sketch"), _ckpt(args.render, "render"), policies, parse_seeds(args.seeds),
        render_only=not args.no_render_only, fixed_at_median=args.median_of,
    )
    harness.write_bench(result, out)
    harness.save_run_config(cfg, out, "bench", _args_doc(args))
    if not args.no_plots:
        from . import plotting

        labels = [r.label for r in result.reports if r.label.startswith("adaptive") or "median" in r.label]
        plotting.psnr_distribution(result.per_run, labels, out / "psnr_distribution.png")
        plotting.speedup_bars(result.reports, out / "speedup.png")
    for r in result.reports:
        print(f"{r.label:40s} psnr {r.psnr_mean:7.2f} (var {r.psnr_var:6.2f}) ssim {r.ssim_mean:.4f} "
              f"agree {r.semantic_agreement:.2f} speedup {r.measured_speedup:.2f}x / {r.predicted_speedup:.2f}x")
    return EXIT_OK


def cmd_perturb(args, cfg: RunConfig) -> int:
    out = _out(args, cfg, "perturb")
    windows = [parse_window(w) for w in (args.window or ["0:10", "10:50"])]
    result = harness.perturb(cfg, _ckpt(args.ckpt, "sketch"), windows, args.bias, args.sigma, parse_seeds(args.seeds))
    harness.write_perturb(result, out)
    harness.save_run_config(cfg, out, "perturb", _args_doc(args))
    if not args.no_plots:
        from . import plotting

        plotting.image_grids(result.grids, out / "perturb_grids.png")
    for row in result.summary:
        print(f"window [{row['window_lo']},{row['window_hi']}): flip rate {row['flip_rate']:.3f} ({row['flips']}/{row['count']})")
    return EXIT_OK


# --------------------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="RunConfig JSON file (defaults built in)")
    common.add_argument("--out", help="output path (directory, or checkpoint file for train)")
    common.add_argument("--workers", type=int, help="parallel sampling processes")
    common.add_argument("--no-plots", action="store_true", help="skip figure rendering")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="sketchrender", description="Sketch-then-render cooperative diffusion sampling at desk scale.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-data", parents=[common], help="export dataset previews and a manifest")
    s.add_argument("--n", type=int, default=1200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--previews", type=int, default=12)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", parents=[common], help="train one denoiser")
    s.add_argument("--role", choices=harness.ROLES, required=True)
    s.add_argument("--resume", help="checkpoint to continue from (must match the config)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", parents=[common], help="draw one sample and its trace")
    s.add_argument("--sketch")
    s.add_argument("--render")
    s.add_argument("--shipped-render", action="store_true", help="use the bundled render checkpoint")
    s.add_argument("--policy", default="never")
    s.add_argument("--condition", default="circle:0")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("trace", parents=[common], help="record D_t traces of sketch-only runs")
    s.add_argument("--sketch")
    s.add_argument("--conditions", help="file with one condition per line (default: all 12)")
    s.add_argument("--seeds", default="0-4")
    s.set_defaults(func=cmd_trace)

    s = sub.add_parser("sweep-delta", parents=[common], help="switch-step distribution per delta")
    s.add_argument("--deltas", default="0.002,0.01,0.03")
    s.add_argument("--traces", help="traces.jsonl written by the trace command")
    s.add_argument("--sketch")
    s.add_argument("--conditions")
    s.add_argument("--seeds", default="0-9")
    s.add_argument("--fix-step", type=int, default=5)
    s.set_defaults(func=cmd_sweep_delta)

    s = sub.add_parser("bench", parents=[common], help="compare switch policies against sketch-only")
    s.add_argument("--sketch")
    s.add_argument("--render")
    s.add_argument("--policy", action="append", help="repeatable; default: the standard five")
    s.add_argument("--seeds", default="0-49")
    s.add_argument("--no-render-only", action="store_true")
    s.add_argument("--median-of", default="adaptive:delta=0.01,fix_step=5",
                   help="add a fixed-step row at this policy's median switch step")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("perturb", parents=[common], help="label flip rate under latent perturbation")
    s.add_argument("--ckpt")
    s.add_argument("--window", action="append", help="LO:HI, repeatable; default 0:10 and 10:50")
    s.add_argument("--bias", type=float, default=0.3)
    s.add_argument("--sigma", type=float, default=0.0)
    s.add_argument("--seeds", default="0-99")
    s.set_defaults(func=cmd_perturb)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = harness.load_config(args.config)
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("--workers must be >= 1")
            cfg.workers = args.workers
        return args.func(args, cfg)
    except (ConfigError, CheckpointError) as exc:
        print(f"sketchrender: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SamplingAbortedError, TrainingDivergedError) as exc:
        print(f"sketchrender: aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
