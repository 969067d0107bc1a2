"""Sampling loops: single model, sketch-then-render cooperation, perturbation.

All three share one loop. Per scheduler step the active model predicts
conditional and unconditional noise (one batched call), guidance combines
them, the scheduler updates the latent, and while the sketch model is active
the switch policy inspects the updated latent. A switch decided after step
``tau`` takes effect from step ``tau + 1``.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable

import numpy as np

from .dataset import NULL_CONDITION, Condition, data_fingerprint, from_model_space
from .denoiser import Denoiser, FingerprintError, flops_per_step
from .schedule import NoiseSchedule, SamplerMode, make_plan, make_schedule, scheduler_step
from .switching import SWITCH_NOW, SwitchPolicy, SwitchState, observe_distance, relative_l1

TRACE_COLUMNS = ("run_id", "tau", "t", "model", "d_t", "d_deriv", "wall_nanos", "flops")

DEFAULT_GUIDANCE = 5.0
DEFAULT_STEPS = 50


class SamplingAbortedError(RuntimeError):
    def __init__(self, tau: int, message: str):
        super().__init__(f"step {tau}: {message}")
        self.tau = tau


_default_schedule: NoiseSchedule | None = None


def default_schedule() -> NoiseSchedule:
    global _default_schedule
    if _default_schedule is None:
        _default_schedule = make_schedule("linear_beta", 1000)
    return _default_schedule


@dataclass(frozen=True)
class SampleRequest:
    condition: Condition
    seed: int
    guidance_scale: float = DEFAULT_GUIDANCE
    steps: int = DEFAULT_STEPS
    mode: SamplerMode = "ddim"
    eta: float = 0.0
    policy: SwitchPolicy = field(default_factory=SwitchPolicy.never)
    clip_denoised: bool = True

    def __post_init__(self):
        if self.steps < 2:
            raise ValueError("steps must be >= 2")
        if not self.guidance_scale >= 1.0:
            raise ValueError("guidance_scale must be >= 1")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")

    def with_policy(self, policy: SwitchPolicy) -> "SampleRequest":
        return SampleRequest(**{**self.__dict__, "policy": policy})


@dataclass(frozen=True)
class PerturbationSpec:
    window: tuple[int, int]
    bias: float = 0.3
    sigma: float = 0.0

    def check(self, steps: int) -> None:
        lo, hi = self.window
        if not (0 <= lo <= hi <= steps) or self.sigma < 0:
            raise ValueError(f"perturbation window {self.window} must lie within [0, {steps}) with sigma >= 0")


@dataclass
class StepRecord:
    tau: int
    t: int
    model: str
    d_t: float | None
    d_deriv: float | None
    wall_nanos: int
    flops: int


@dataclass
class SampleTrace:
    steps: list[StepRecord]
    switch_step: int | None
    condition: str = ""
    seed: int = 0
    policy: str = ""
    run_id: str = ""

    @property
    def total_wall_nanos(self) -> int:
        return sum(s.wall_nanos for s in self.steps)

    @property
    def total_flops(self) -> int:
        return sum(s.flops for s in self.steps)

    @property
    def distances(self) -> list[float | None]:
        return [s.d_t for s in self.steps]

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "condition": self.condition,
            "seed": self.seed,
            "policy": self.policy,
            "switch_step": self.switch_step,
            "total_wall_nanos": self.total_wall_nanos,
            "total_flops": self.total_flops,
            "steps": [asdict(s) for s in self.steps],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "SampleTrace":
        return cls(
            steps=[StepRecord(**s) for s in doc["steps"]],
            switch_step=doc["switch_step"],
            condition=doc.get("condition", ""),
            seed=doc.get("seed", 0),
            policy=doc.get("policy", ""),
            run_id=doc.get("run_id", ""),
        )

    def csv_rows(self) -> Iterable[dict[str, Any]]:
        for s in self.steps:
            yield {"run_id": self.run_id, **asdict(s)}


def traces_to_csv(traces: Iterable[SampleTrace]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=TRACE_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for tr in traces:
        for row in tr.csv_rows():
            writer.writerow({k: ("" if row[k] is None else row[k]) for k in TRACE_COLUMNS})
    return buf.getvalue()


def decode(latent: np.ndarray) -> np.ndarray:
    """Map a final latent back to a [0, 1] image."""
    return from_model_space(latent)


def _rng_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    init, sched, perturb = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(init), np.random.default_rng(sched), np.random.default_rng(perturb)


def initial_latent(seed: int, shape) -> np.ndarray:
    return _rng_streams(seed)[0].standard_normal(shape).astype(np.float32)


def _run(
    sketch: Denoiser,
    render: Denoiser | None,
    req: SampleRequest,
    policy: SwitchPolicy,
    schedule: NoiseSchedule | None,
    perturbation: PerturbationSpec | None = None,
) -> tuple[np.ndarray, SampleTrace]:
    schedule = schedule or default_schedule()
    shape = sketch.config.input_shape
    if sketch.fingerprint != data_fingerprint(shape):
        raise FingerprintError("sketch model fingerprint does not match its input shape")
    if render is not None and render.fingerprint != sketch.fingerprint:
        raise FingerprintError(
            f"sketch ({sketch.fingerprint}) and render ({render.fingerprint}) models live in different data spaces"
        )
    if perturbation is not None:
        perturbation.check(req.steps)
    if schedule.T > sketch.config.num_timesteps:
        raise ValueError("schedule is longer than the model's timestep range")

    plan = make_plan(schedule, req.steps)
    rng_init, rng_sched, rng_perturb = _rng_streams(req.seed)
    z = rng_init.standard_normal(shape).astype(np.float32)
    cid = req.condition.id
    s = float(req.guidance_scale)
    guided = s != 1.0
    ids = np.array([cid, NULL_CONDITION]) if guided else np.array([cid])
    passes = len(ids)

    state = SwitchState()
    model, role = sketch, "sketch"
    if policy.kind == "fixed" and policy.at_step == 0 and render is not None:
        state.switched, state.switch_step = True, 0
        model, role = render, "render"
    flops = {id(sketch): passes * flops_per_step(sketch.config)}
    if render is not None:
        flops[id(render)] = passes * flops_per_step(render.config)

    records: list[StepRecord] = []
    z_prev: np.ndarray | None = None
    d_prev: float | None = None
    for tau, t, t_prev in plan.steps():
        batch = np.broadcast_to(z, (passes, *shape))
        t0 = time.perf_counter_ns()
        out = model.predict(batch, t, ids)
        wall = time.perf_counter_ns() - t0
        eps = out[1] + s * (out[0] - out[1]) if guided else out[0]
        z = scheduler_step(eps, t, t_prev, z, schedule, req.mode, req.eta, rng_sched, req.clip_denoised)
        z = z.astype(np.float32, copy=False)
        if perturbation is not None and perturbation.window[0] <= tau < perturbation.window[1]:
            noise = rng_perturb.standard_normal(shape).astype(np.float32) if perturbation.sigma else 0.0
            z = z + np.float32(perturbation.bias) + np.float32(perturbation.sigma) * noise
        if not np.all(np.isfinite(z)):
            raise SamplingAbortedError(tau, "latent became non-finite")
        d = relative_l1(z, z_prev) if z_prev is not None else None
        dd = d_prev - d if (d is not None and d_prev is not None) else None
        records.append(StepRecord(tau, t, role, d, dd, wall, flops[id(model)]))
        if render is not None and not state.switched:
            if observe_distance(state, policy, d) == SWITCH_NOW:
                model, role = render, "render"
        z_prev, d_prev = z, d

    trace = SampleTrace(
        records,
        state.switch_step,
        condition=str(req.condition),
        seed=req.seed,
        policy=str(policy) if render is not None else "single",
    )
    return z, trace


def sample_single(model: Denoiser, req: SampleRequest, schedule: NoiseSchedule | None = None):
    """Guided sampling with one model; ``req.policy`` is ignored."""
    return _run(model, None, req, SwitchPolicy.never(), schedule)


def sample_cooperative(sketch: Denoiser, render: Denoiser, req: SampleRequest, schedule: NoiseSchedule | None = None):
    """Sketch model first, render model after the policy fires."""
    return _run(sketch, render, req, req.policy, schedule)


def perturbed_sample(model: Denoiser, req: SampleRequest, spec: PerturbationSpec, schedule: NoiseSchedule | None = None):
    """Single-model sampling with ``bias + sigma * N(0, 1)`` added after each update inside ``spec.window``."""
    return _run(model, None, req, SwitchPolicy.never(), schedule, perturbation=spec)
