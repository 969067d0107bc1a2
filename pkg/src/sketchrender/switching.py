"""When to hand the sampling loop from the sketch model to the render model.

Step counting: ``SwitchState.tau`` is the number of scheduler steps completed
(1 after the first update). ``observe`` runs after every update while the
sketch model is active; when it returns ``SWITCH_NOW`` at count ``tau``, the
sketch model has run exactly ``tau`` steps and the render model takes over at
trace row ``tau``. That count is the recorded switch step.

The adaptive rule tracks ``D = tanh(|x_cur - x_prev|_1 / |x_prev|_1)`` between
consecutive post-update latents and switches on the first step where the
decrease ``D_prev - D_cur`` lies strictly inside ``(0, delta)`` and at least
``fix_step`` sketch steps have run. The first update has no predecessor, so
``D`` is defined from ``tau = 2`` and its difference from ``tau = 3``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

CONTINUE = "continue_sketching"
SWITCH_NOW = "switch_now"


class DegenerateLatentError(ValueError):
    pass


class SwitchContractError(RuntimeError):
    pass


@dataclass(frozen=True)
class SwitchPolicy:
    kind: str  # adaptive | fixed | never | immediate
    delta: float | None = None
    fix_step: int | None = None
    at_step: int | None = None

    def __post_init__(self):
        if self.kind == "adaptive":
            if self.delta is None or not math.isfinite(self.delta) or self.delta <= 0:
                raise ValueError("adaptive policy needs a finite delta > 0")
            if self.fix_step is None or self.fix_step < 1:
                raise ValueError("adaptive policy needs fix_step >= 1")
        elif self.kind == "fixed":
            if self.at_step is None or self.at_step < 0:
                raise ValueError("fixed policy needs at_step >= 0")
        elif self.kind not in ("never", "immediate"):
            raise ValueError(f"unknown policy kind {self.kind!r}")

    @classmethod
    def adaptive(cls, delta: float = 0.01, fix_step: int = 5) -> "SwitchPolicy":
        return cls("adaptive", delta=float(delta), fix_step=int(fix_step))

    @classmethod
    def fixed(cls, at_step: int) -> "SwitchPolicy":
        return cls("fixed", at_step=int(at_step))

    @classmethod
    def never(cls) -> "SwitchPolicy":
        return cls("never")

    @classmethod
    def immediate(cls) -> "SwitchPolicy":
        return cls("immediate")

    @property
    def uses_render(self) -> bool:
        return self.kind != "never"

    def __str__(self) -> str:
        if self.kind == "adaptive":
            return f"adaptive:delta={self.delta:g},fix_step={self.fix_step}"
        if self.kind == "fixed":
            return f"fixed:step={self.at_step}"
        return self.kind


# Named after the two delta settings of the quality- and speed-oriented rows.
PRESETS = {
    "quality": SwitchPolicy.adaptive(0.01, 5),
    "speed": SwitchPolicy.adaptive(0.03, 5),
}


def parse_policy(text: str) -> SwitchPolicy:
    """Parse ``adaptive:delta=0.01,fix_step=5``, ``fixed:step=10``, ``never``,
    ``immediate`` or a preset name (``quality``, ``speed``)."""
    text = text.strip()
    if text in PRESETS:
        return PRESETS[text]
    kind, _, rest = text.partition(":")
    kv: dict[str, str] = {}
    if rest:
        for item in rest.split(","):
            key, eq, val = item.partition("=")
            if not eq:
                raise ValueError(f"malformed policy option {item!r} in {text!r}")
            kv[key.strip()] = val.strip()
    try:
        if kind == "adaptive":
            unknown = set(kv) - {"delta", "fix_step"}
            if unknown:
                raise ValueError(f"unknown adaptive options {sorted(unknown)}")
            return SwitchPolicy.adaptive(float(kv.get("delta", 0.01)), int(kv.get("fix_step", 5)))
        if kind == "fixed":
            if set(kv) != {"step"}:
                raise ValueError("fixed policy takes exactly one option: step")
            return SwitchPolicy.fixed(int(kv["step"]))
        if kind in ("never", "immediate") and not kv:
            return SwitchPolicy(kind)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"bad policy {text!r}: {exc}") from None
    raise ValueError(f"bad policy {text!r}")


def relative_l1(x_curr: np.ndarray, x_prev: np.ndarray) -> float:
    """``tanh(|x_curr - x_prev|_1 / |x_prev|_1)``, in [0, 1)."""
    a = np.asarray(x_curr, dtype=np.float64)
    b = np.asarray(x_prev, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    denom = float(np.abs(b).sum())
    if denom <= 0.0 or not math.isfinite(denom):
        raise DegenerateLatentError("previous latent has zero (or non-finite) L1 norm")
    return math.tanh(float(np.abs(a - b).sum()) / denom)


@dataclass
class SwitchState:
    tau: int = 0
    prev_latent: np.ndarray | None = field(default=None, repr=False)
    d_prev: float | None = None
    d_curr: float | None = None
    d_deriv: float | None = None
    switched: bool = False
    switch_step: int | None = None


def _decide(state: SwitchState, policy: SwitchPolicy, d: float | None) -> str:
    state.d_prev, state.d_curr = state.d_curr, d
    state.d_deriv = state.d_prev - d if (d is not None and state.d_prev is not None) else None
    if policy.kind == "never":
        hit = False
    elif policy.kind == "immediate":
        hit = True
    elif policy.kind == "fixed":
        hit = state.tau >= policy.at_step
    else:
        dd = state.d_deriv
        hit = dd is not None and 0.0 < dd < policy.delta and state.tau >= policy.fix_step
    if hit:
        state.switched = True
        state.switch_step = state.tau
        return SWITCH_NOW
    return CONTINUE


def observe(state: SwitchState, policy: SwitchPolicy, latent_after_step: np.ndarray) -> str:
    """Record one post-update latent and decide whether to switch."""
    if state.switched:
        raise SwitchContractError("observe called after the switch already happened")
    state.tau += 1
    latent = np.array(latent_after_step, copy=True)
    d = relative_l1(latent, state.prev_latent) if state.prev_latent is not None else None
    state.prev_latent = latent
    return _decide(state, policy, d)


def observe_distance(state: SwitchState, policy: SwitchPolicy, d: float | None) -> str:
    """Like :func:`observe` but fed a precomputed distance (replay path)."""
    if state.switched:
        raise SwitchContractError("observe called after the switch already happened")
    state.tau += 1
    return _decide(state, policy, d)


def replay_switch_step(
    policy: SwitchPolicy,
    distances: Sequence[float | None],
    first_tau: int = 0,
) -> int | None:
    """Switch step the policy would pick on a recorded distance sequence.

    ``distances[i]`` is the value observed at step count ``first_tau + i``.
    A sketch-only trace replays with ``first_tau=1`` (its first entry is
    ``None``); hand-written sequences default to counting from 0.
    """
    state = SwitchState(tau=first_tau - 1)
    for d in distances:
        if observe_distance(state, policy, d) == SWITCH_NOW:
            return state.switch_step
    return None


def predicted_speedup(switch_step: int, total_steps: int, flops_sketch: float, flops_render: float) -> float:
    """Sketch-only cost over cooperative cost, from per-step FLOPs."""
    if not 0 <= switch_step <= total_steps:
        raise ValueError("switch_step must lie in [0, total_steps]")
    coop = switch_step * flops_sketch + (total_steps - switch_step) * flops_render
    return total_steps * flops_sketch / coop

