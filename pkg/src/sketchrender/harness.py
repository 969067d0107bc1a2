"""Experiment orchestration behind the command line.

Every experiment is a function of a :class:`RunConfig`, explicit seeds and
checkpoint paths. Sampling jobs fan out over a process pool when more than
one worker is configured; each job owns its seeded rng streams, so outputs
(apart from wall-clock columns) do not depend on the worker count.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .dataset import (
    GENERATOR_VERSION,
    Condition,
    data_fingerprint,
    gen_dataset,
    image_grid,
    semantic_oracle,
    to_arrays,
    to_model_space,
    write_pgm,
)
from .denoiser import (
    RENDER_CONFIG,
    SKETCH_CONFIG,
    Checkpoint,
    Denoiser,
    DenoiserConfig,
    TrainHyperparams,
    atomic_write,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .metrics import MetricsReport, aggregate, psnr, quartiles, reports_to_csv, ssim
from .pipeline import (
    TRACE_COLUMNS,
    PerturbationSpec,
    SampleRequest,
    SampleTrace,
    decode,
    perturbed_sample,
    sample_cooperative,
    sample_single,
)
from .schedule import NoiseSchedule
from .switching import PRESETS, SwitchPolicy, parse_policy, replay_switch_step

log = logging.getLogger(__name__)

ENV_OUT_DIR = "SKETCHRENDER_OUT_DIR"
ENV_WORKERS = "SKETCHRENDER_WORKERS"
ROLES = ("sketch", "render")


class ConfigError(ValueError):
    """Bad configuration or usage; maps to exit code 2."""


def shipped_checkpoint(role: str) -> Path:
    if role not in ROLES:
        raise ConfigError(f"unknown role {role!r}")
    return Path(str(resources.files("sketchrender").joinpath("assets", f"{role}.srdf")))


def schema() -> dict[str, Any]:
    return json.loads(resources.files("sketchrender").joinpath("csv_schema.json").read_text())


# --------------------------------------------------------------------------- config

@dataclass
class RunConfig:
    data_seed: int = 0
    data_size: int = 12000
    sketch: DenoiserConfig = SKETCH_CONFIG
    render: DenoiserConfig = RENDER_CONFIG
    train: TrainHyperparams = field(default_factory=TrainHyperparams)
    init_seeds: dict[str, int] = field(default_factory=lambda: {"sketch": 0, "render": 1})
    schedule: dict[str, Any] = field(default_factory=lambda: {"kind": "linear_beta", "T": 1000, "params": {}})
    steps: int = 50
    guidance_scale: float = 5.0
    mode: str = "ddim"
    eta: float = 0.0
    policies: dict[str, str] = field(default_factory=lambda: {k: str(v) for k, v in PRESETS.items()})
    out_dir: str = "runs"
    workers: int = 1

    def __post_init__(self):
        if self.data_size < 1:
            raise ConfigError("data_size must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.steps < 2:
            raise ConfigError("steps must be >= 2")
        if self.mode not in ("ddim", "ddpm"):
            raise ConfigError(f"unknown sampler mode {self.mode!r}")
        for name, text in self.policies.items():
            try:
                parse_policy(text)
            except ValueError as exc:
                raise ConfigError(f"policy preset {name!r}: {exc}") from None

    def model_config(self, role: str) -> DenoiserConfig:
        if role not in ROLES:
            raise ConfigError(f"unknown role {role!r}")
        return self.sketch if role == "sketch" else self.render

    def make_schedule(self) -> NoiseSchedule:
        try:
            return NoiseSchedule.from_dict(self.schedule)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad schedule: {exc}") from None

    def policy(self, text: str) -> SwitchPolicy:
        try:
            return parse_policy(self.policies.get(text, text))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def request(self, cond: Condition, seed: int, policy: SwitchPolicy | None = None) -> SampleRequest:
        return SampleRequest(
            cond, seed, self.guidance_scale, self.steps, self.mode, self.eta,
            policy or SwitchPolicy.never(),
        )

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["sketch"] = self.sketch.to_dict()
        d["render"] = self.render.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "RunConfig":
        doc = dict(doc)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            for role, default in (("sketch", SKETCH_CONFIG), ("render", RENDER_CONFIG)):
                if role in doc:
                    doc[role] = DenoiserConfig.from_dict({**default.to_dict(), **doc[role]})
            if "train" in doc:
                doc["train"] = TrainHyperparams(**doc["train"])
            return cls(**doc)
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"bad config: {exc}") from None


def load_config(path: str | Path | None = None, environ: dict[str, str] | None = None) -> RunConfig:
    """Read a JSON RunConfig (defaults when ``path`` is None), then apply env overrides."""
    environ = os.environ if environ is None else environ
    doc: dict[str, Any] = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
    cfg = RunConfig.from_dict(doc)
    if environ.get(ENV_OUT_DIR):
        cfg.out_dir = environ[ENV_OUT_DIR]
    if environ.get(ENV_WORKERS):
        try:
            cfg.workers = int(environ[ENV_WORKERS])
        except ValueError:
            raise ConfigError(f"{ENV_WORKERS} must be an integer") from None
        if cfg.workers < 1:
            raise ConfigError(f"{ENV_WORKERS} must be >= 1")
    return cfg


# --------------------------------------------------------------------------- output helpers

def write_text(path: str | Path, text: str) -> Path:
    atomic_write(path, text.encode("utf-8"))
    return Path(path)


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[dict[str, Any]]) -> Path:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: ("" if row.get(k) is None else row[k]) for k in columns})
    return write_text(path, buf.getvalue())


def write_pgm_atomic(path: str | Path, image: np.ndarray) -> Path:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    write_pgm(tmp, image)
    os.replace(tmp, path)
    return path


def _traces_csv_rows(traces: Iterable[SampleTrace]):
    for tr in traces:
        for row in tr.csv_rows():
            yield {**row, "condition": tr.condition, "seed": tr.seed}


TRACE_TABLE_COLUMNS = TRACE_COLUMNS[:1] + ("condition", "seed") + TRACE_COLUMNS[1:]


# --------------------------------------------------------------------------- parallel sampling

@dataclass(frozen=True)
class Job:
    kind: str  # single | cooperative | perturbed
    role: str  # model for single/perturbed runs
    condition: int
    seed: int
    policy: str = "never"
    perturb: tuple[int, int, float, float] | None = None
    run_id: str = ""


_MODELS: dict[str, Denoiser] = {}
_RUN: dict[str, Any] = {}


def _init_worker(paths: dict[str, str | None], cfg_doc: dict[str, Any]) -> None:
    _MODELS.clear()
    for role, p in paths.items():
        if p is not None:
            _MODELS[role] = load_checkpoint(p).model()
    for m in _MODELS.values():  # first calls are slow; keep them out of the timings
        for _ in range(3):
            m.predict(np.zeros((2, *m.config.input_shape), np.float32), 1, np.zeros(2, dtype=np.int64))
    cfg = RunConfig.from_dict(cfg_doc)
    _RUN["cfg"] = cfg
    _RUN["schedule"] = cfg.make_schedule()


def _run_job(job: Job) -> tuple[np.ndarray, SampleTrace]:
    cfg: RunConfig = _RUN["cfg"]
    schedule = _RUN["schedule"]
    req = cfg.request(Condition.from_id(job.condition), job.seed, parse_policy(job.policy))
    if job.kind == "single":
        z, tr = sample_single(_MODELS[job.role], req, schedule)
    elif job.kind == "cooperative":
        z, tr = sample_cooperative(_MODELS["sketch"], _MODELS["render"], req, schedule)
    elif job.kind == "perturbed":
        lo, hi, bias, sigma = job.perturb
        z, tr = perturbed_sample(_MODELS[job.role], req, PerturbationSpec((lo, hi), bias, sigma), schedule)
    else:
        raise ValueError(f"unknown job kind {job.kind!r}")
    tr.run_id = job.run_id
    return decode(z), tr


def run_jobs(
    jobs: Sequence[Job],
    cfg: RunConfig,
    sketch_path: str | Path | None,
    render_path: str | Path | None = None,
) -> list[tuple[np.ndarray, SampleTrace]]:
    """Run sampling jobs in order; results are returned in job order."""
    paths = {"sketch": str(sketch_path) if sketch_path else None, "render": str(render_path) if render_path else None}
    cfg_doc = cfg.to_dict()
    if cfg.workers == 1 or len(jobs) <= 1:
        _init_worker(paths, cfg_doc)
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=cfg.workers, initializer=_init_worker, initargs=(paths, cfg_doc)) as pool:
        return list(pool.map(_run_job, jobs, chunksize=max(1, len(jobs) // (4 * cfg.workers))))


def _checked_pair(sketch_path, render_path) -> tuple[Checkpoint, Checkpoint | None]:
    sk = _load(sketch_path, "sketch")
    rd = _load(render_path, "render") if render_path else None
    if rd is not None and rd.fingerprint != sk.fingerprint:
        raise ConfigError(f"sketch ({sk.fingerprint}) and render ({rd.fingerprint}) checkpoints have different fingerprints")
    return sk, rd


def _load(path, role: str) -> Checkpoint:
    if not Path(path).is_file():
        raise ConfigError(f"{role} checkpoint {path} not found")
    return load_checkpoint(path)


def seed_conditions(seeds: Sequence[int]) -> list[tuple[int, int]]:
    """Pair each seed with a condition, cycling through the 12 conditions."""
    return [(s % 12, s) for s in seeds]


def _rid(prefix: str, cond: int, seed: int) -> str:
    return f"{prefix}/{Condition.from_id(cond)}/s{seed}"


# --------------------------------------------------------------------------- experiments

def gen_data(n: int, seed: int, out_dir: str | Path, previews: int = 12) -> dict[str, Any]:
    """Export preview PGMs and a manifest describing the dataset."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = gen_dataset(n, seed)
    x, c = to_arrays(data)
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(x, dtype="<f4").tobytes())
    digest.update(np.ascontiguousarray(c, dtype="<i8").tobytes())
    counts = np.bincount(c, minlength=12)
    files = []
    for i in range(min(previews, n)):
        name = f"preview_{i:03d}_{str(data[i][1]).replace(':', 'q')}.pgm"
        write_pgm_atomic(out / name, data[i][0])
        files.append(name)
    manifest = {
        "generator_version": GENERATOR_VERSION,
        "n": n,
        "seed": seed,
        "fingerprint": data_fingerprint(x.shape[1:]),
        "condition_counts": {str(Condition.from_id(i)): int(k) for i, k in enumerate(counts)},
        "data_sha256": digest.hexdigest(),
        "previews": files,
    }
    write_text(out / "manifest.json", json.dumps(manifest, sort_keys=True, indent=2))
    return manifest


def training_data(cfg: RunConfig) -> tuple[tuple[np.ndarray, np.ndarray], dict[str, Any]]:
    x, c = to_arrays(gen_dataset(cfg.data_size, cfg.data_seed))
    info = {"generator_version": GENERATOR_VERSION, "n": cfg.data_size, "seed": cfg.data_seed}
    return (to_model_space(x), c), info


def train_role(
    cfg: RunConfig,
    role: str,
    out_path: str | Path,
    resume: str | Path | None = None,
    progress: bool = False,
) -> Checkpoint:
    config = cfg.model_config(role)
    data, info = training_data(cfg)
    init = None
    if resume is not None:
        prev = _load(resume, role)
        if prev.config != config:
            raise ConfigError(f"cannot resume: checkpoint architecture {prev.config.to_dict()} differs from config")
        if prev.metadata.get("dataset") != info:
            raise ConfigError("cannot resume: checkpoint was trained on a different dataset")
        if prev.metadata.get("schedule") != cfg.make_schedule().to_dict():
            raise ConfigError("cannot resume: checkpoint was trained with a different schedule")
        init = prev.model()
    ckpt = train(config, data, cfg.train, cfg.make_schedule(), init=init, init_seed=cfg.init_seeds.get(role, 0),
                 dataset_info=info, progress=progress)
    ckpt.metadata["role"] = role
    if resume is not None:
        ckpt.metadata["resumed_steps"] = int(prev.metadata.get("steps", 0)) + int(prev.metadata.get("resumed_steps", 0))
    save_checkpoint(ckpt, out_path)
    return ckpt


def sample_one(
    cfg: RunConfig,
    sketch_path: str | Path,
    render_path: str | Path | None,
    policy_text: str,
    cond: Condition,
    seed: int,
    out_dir: str | Path,
) -> tuple[np.ndarray, SampleTrace]:
    policy = cfg.policy(policy_text)
    if policy.uses_render and render_path is None:
        raise ConfigError(f"policy {policy} needs a render checkpoint")
    _checked_pair(sketch_path, render_path if policy.uses_render else None)
    kind = "cooperative" if policy.uses_render else "single"
    job = Job(kind, "sketch", cond.id, seed, str(policy), run_id=_rid(str(policy), cond.id, seed))
    img, tr = run_jobs([job], cfg, sketch_path, render_path if policy.uses_render else None)[0]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_pgm_atomic(out / "sample.pgm", img)
    write_text(out / "trace.json", tr.to_json())
    write_csv(out / "trace.csv", TRACE_COLUMNS, tr.csv_rows())
    label = semantic_oracle(img)
    write_text(out / "label.json", json.dumps({"requested": str(cond), "detected": label.key(), "confidence": label.confidence}))
    return img, tr


def trace_runs(
    cfg: RunConfig,
    sketch_path: str | Path,
    conditions: Sequence[Condition],
    seeds: Sequence[int],
) -> list[SampleTrace]:
    """Sketch-only runs recording D_t at every step, one per (condition, seed)."""
    _checked_pair(sketch_path, None)
    jobs = [Job("single", "sketch", c.id, s, run_id=_rid("trace", c.id, s)) for c in conditions for s in seeds]
    return [tr for _, tr in run_jobs(jobs, cfg, sketch_path)]


def write_traces(traces: Sequence[SampleTrace], out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "traces.csv", TRACE_TABLE_COLUMNS, _traces_csv_rows(traces))
    write_text(out / "traces.jsonl", "".join(tr.to_json() + "\n" for tr in traces))


def read_traces(path: str | Path) -> list[SampleTrace]:
    try:
        lines = Path(path).read_text().splitlines()
    except FileNotFoundError:
        raise ConfigError(f"trace file {path} not found") from None
    return [SampleTrace.from_dict(json.loads(line)) for line in lines if line.strip()]


def sweep_delta(traces: Sequence[SampleTrace], deltas: Sequence[float], fix_step: int = 5) -> tuple[list[dict], list[dict]]:
    """Replay recorded sketch-only traces under each delta.

    Returns ``(raw, summary)`` rows. Runs that never switch count as switching
    at the final step.
    """
    if not deltas:
        raise ConfigError("delta list is empty")
    if not traces:
        raise ConfigError("no traces to replay")
    raw, summary = [], []
    for delta in deltas:
        policy = SwitchPolicy.adaptive(delta, fix_step)
        steps = []
        for tr in traces:
            k = replay_switch_step(policy, tr.distances, first_tau=1)
            eff = len(tr.steps) if k is None else k
            steps.append(eff)
            raw.append({"delta": delta, "run_id": tr.run_id, "condition": tr.condition, "seed": tr.seed,
                        "switch_step": eff, "switched": int(k is not None)})
        q1, q2, q3 = quartiles(steps)
        summary.append({"delta": delta, "count": len(steps), "q1": q1, "median": q2, "q3": q3,
                        "mean": float(np.mean(steps)), "min": min(steps), "max": max(steps),
                        "never_switched": sum(1 for r in raw[-len(traces):] if not r["switched"])})
    return raw, summary


DEFAULT_BENCH_POLICIES = ("never", "immediate", "fixed:step=10", "adaptive:delta=0.01,fix_step=5",
                          "adaptive:delta=0.03,fix_step=5")


@dataclass
class BenchResult:
    reports: list[MetricsReport]
    per_run: list[dict[str, Any]]
    fixed_at_median: int | None


def bench(
    cfg: RunConfig,
    sketch_path: str | Path,
    render_path: str | Path,
    policies: Sequence[str],
    seeds: Sequence[int],
    render_only: bool = True,
    fixed_at_median: str | None = "adaptive:delta=0.01,fix_step=5",
) -> BenchResult:
    """Compare policies against the sketch-only baseline on paired seeds.

    Adds a render-only row, and a fixed-step row switching at the median step
    observed for ``fixed_at_median`` (when that policy is among ``policies``).
    """
    _checked_pair(sketch_path, render_path)
    parsed = [cfg.policy(p) for p in policies]
    if not parsed:
        raise ConfigError("policy list is empty")
    pairs = seed_conditions(seeds)

    def job(label: str, pol: SwitchPolicy | None, c: int, s: int) -> Job:
        if pol is None:
            role = "render" if label == "render_only" else "sketch"
            return Job("single", role, c, s, run_id=_rid(label, c, s))
        return Job("cooperative", "sketch", c, s, str(pol), run_id=_rid(label, c, s))

    def interleaved(groups: list[tuple[str, SwitchPolicy | None]]) -> dict[str, list]:
        # seed-major order so host-speed drift hits every policy alike
        jobs = [job(label, pol, c, s) for c, s in pairs for label, pol in groups]
        res = run_jobs(jobs, cfg, sketch_path, render_path)
        k = len(groups)
        return {label: res[i::k] for i, (label, _) in enumerate(groups)}

    groups: list[tuple[str, SwitchPolicy | None]] = [("baseline", None)]
    groups += [(str(pol), pol) for pol in parsed if pol.kind != "never"]
    if render_only:
        groups.append(("render_only", None))
    out = interleaved(groups)
    base = out["baseline"]
    base_imgs = [img for img, _ in base]
    base_traces = [tr for _, tr in base]
    base_labels = [semantic_oracle(img) for img in base_imgs]

    rows: list[tuple[str, list, list]] = []
    for pol in parsed:
        rows.append((str(pol), base if pol.kind == "never" else out[str(pol)], base_traces))
    median_step = None
    if fixed_at_median is not None:
        target = str(cfg.policy(fixed_at_median))
        for label, res, _ in rows:
            if label == target:
                steps = [tr.switch_step if tr.switch_step is not None else cfg.steps for _, tr in res]
                median_step = int(round(float(np.median(steps))))
                fixed = SwitchPolicy.fixed(median_step)
                second = interleaved([("baseline", None), (f"median-{fixed}", fixed)])
                rows.append((f"{fixed} (adaptive median)", second[f"median-{fixed}"], [tr for _, tr in second["baseline"]]))
                break
    if render_only:
        rows.append(("render_only", out["render_only"], base_traces))

    reports, per_run = [], []
    for label, res, ref_traces in rows:
        imgs = [img for img, _ in res]
        traces = [tr for _, tr in res]
        labels = [(semantic_oracle(img), bl) for img, bl in zip(imgs, base_labels)]
        reports.append(aggregate(traces, list(zip(imgs, base_imgs)), ref_traces, label=label, labels=labels))
        for img, tr, ref, (ls, lr) in zip(imgs, traces, base_imgs, labels):
            per_run.append({
                "policy": label, "run_id": tr.run_id, "condition": tr.condition, "seed": tr.seed,
                "psnr": psnr(img, ref), "ssim": ssim(img, ref), "label": ls.key(), "baseline_label": lr.key(),
                "switch_step": tr.switch_step, "wall_nanos": tr.total_wall_nanos, "flops": tr.total_flops,
            })
    return BenchResult(reports, per_run, median_step)


def write_bench(result: BenchResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_text(out / "bench.csv", reports_to_csv(result.reports))
    write_text(out / "bench.json", json.dumps([json.loads(r.to_json()) for r in result.reports], indent=2))
    write_csv(out / "bench_runs.csv", BENCH_RUN_COLUMNS, result.per_run)


BENCH_RUN_COLUMNS = ("policy", "run_id", "condition", "seed", "psnr", "ssim", "label", "baseline_label",
                     "switch_step", "wall_nanos", "flops")


@dataclass
class PerturbResult:
    summary: list[dict[str, Any]]
    per_run: list[dict[str, Any]]
    grids: dict[str, np.ndarray]


def perturb(
    cfg: RunConfig,
    ckpt_path: str | Path,
    windows: Sequence[tuple[int, int]],
    bias: float,
    sigma: float,
    seeds: Sequence[int],
    grid_count: int = 8,
) -> PerturbResult:
    """Paired-seed perturbation study: how often does the oracle label flip?"""
    _checked_pair(ckpt_path, None)
    if not windows:
        raise ConfigError("window list is empty")
    for w in windows:
        try:
            PerturbationSpec(tuple(w), bias, sigma).check(cfg.steps)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    pairs = seed_conditions(seeds)
    base = run_jobs([Job("single", "sketch", c, s, run_id=_rid("base", c, s)) for c, s in pairs], cfg, ckpt_path)
    base_labels = [semantic_oracle(img) for img, _ in base]
    summary, per_run, grids = [], [], {}
    for lo, hi in windows:
        jobs = [Job("perturbed", "sketch", c, s, perturb=(lo, hi, bias, sigma), run_id=_rid(f"w{lo}-{hi}", c, s))
                for c, s in pairs]
        res = run_jobs(jobs, cfg, ckpt_path)
        flips, psnrs = 0, []
        for (img, tr), (bimg, _), bl in zip(res, base, base_labels):
            lab = semantic_oracle(img)
            flip = lab.key() != bl.key()
            flips += flip
            p = psnr(img, bimg)
            psnrs.append(p)
            per_run.append({"window_lo": lo, "window_hi": hi, "run_id": tr.run_id, "condition": tr.condition,
                            "seed": tr.seed, "baseline_label": bl.key(), "label": lab.key(), "flipped": int(flip),
                            "psnr": p})
        finite = [p for p in psnrs if np.isfinite(p)]
        summary.append({"window_lo": lo, "window_hi": hi, "bias": bias, "sigma": sigma, "count": len(res),
                        "flips": flips, "flip_rate": flips / len(res),
                        "psnr_mean": float(np.mean(finite)) if finite else float("inf")})
        k = min(grid_count, len(res))
        grids[f"w{lo}-{hi}"] = image_grid([b for b, _ in base[:k]] + [img for img, _ in res[:k]], ncols=k)
    return PerturbResult(summary, per_run, grids)


PERTURB_COLUMNS = ("window_lo", "window_hi", "bias", "sigma", "count", "flips", "flip_rate", "psnr_mean")
PERTURB_RUN_COLUMNS = ("window_lo", "window_hi", "run_id", "condition", "seed", "baseline_label", "label",
                       "flipped", "psnr")
SWEEP_COLUMNS = ("delta", "count", "q1", "median", "q3", "mean", "min", "max", "never_switched")
SWEEP_RUN_COLUMNS = ("delta", "run_id", "condition", "seed", "switch_step", "switched")


def write_perturb(result: PerturbResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "flip_rates.csv", PERTURB_COLUMNS, result.summary)
    write_csv(out / "perturb_runs.csv", PERTURB_RUN_COLUMNS, result.per_run)
    for name, grid in result.grids.items():
        write_pgm_atomic(out / f"grid_{name}.pgm", grid)


def write_sweep(raw: list[dict], summary: list[dict], out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "sweep_summary.csv", SWEEP_COLUMNS, summary)
    write_csv(out / "switch_steps.csv", SWEEP_RUN_COLUMNS, raw)


def save_run_config(cfg: RunConfig, out_dir: str | Path, command: str, args: dict[str, Any]) -> None:
    doc = {"command": command, "args": args, "config": cfg.to_dict()}
    write_text(Path(out_dir) / "run_config.json", json.dumps(doc, sort_keys=True, indent=2, default=str))

