from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sketchrender.switching import (
    CONTINUE,
    PRESETS,
    SWITCH_NOW,
    DegenerateLatentError,
    SwitchContractError,
    SwitchPolicy,
    SwitchState,
    observe,
    parse_policy,
    predicted_speedup,
    relative_l1,
    replay_switch_step,
)


def test_relative_l1_values():
    x = np.array([1.0, 1.0])
    assert relative_l1(x, x) == 0.0
    assert relative_l1(np.array([1.5, 0.5]), x) == pytest.approx(math.tanh(0.5), abs=1e-15)
    assert abs(relative_l1(np.array([1.5, 0.5]), x) - 0.462117) < 1e-6


def test_relative_l1_errors():
    with pytest.raises(DegenerateLatentError):
        relative_l1(np.ones(3), np.zeros(3))
    with pytest.raises(ValueError):
        relative_l1(np.ones(3), np.ones(4))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(1e-3, 1e3))
def test_relative_l1_scale_invariant_and_bounded(seed, c):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal(16), rng.standard_normal(16)
    d = relative_l1(a, b)
    assert 0.0 <= d < 1.0
    assert relative_l1(c * a, c * b) == pytest.approx(d, rel=1e-9)


def test_hand_traced_sequence_switches_at_three():
    policy = SwitchPolicy.adaptive(0.01, 2)
    assert replay_switch_step(policy, [0.80, 0.50, 0.48, 0.475, 0.474, 0.4735]) == 3


def test_hand_trace_derivatives_recorded():
    state = SwitchState(tau=-1)
    from sketchrender.switching import observe_distance

    derivs = []
    for d in [0.80, 0.50, 0.48, 0.475]:
        observe_distance(state, SwitchPolicy.never(), d)
        derivs.append(state.d_deriv)
    assert derivs[0] is None
    np.testing.assert_allclose(derivs[1:], [0.30, 0.02, 0.005], atol=1e-12)


def test_exact_tie_does_not_switch():
    # 0.5 - 0.25 == 0.25 exactly in binary floating point
    assert replay_switch_step(SwitchPolicy.adaptive(0.25, 1), [0.75, 0.5, 0.25]) is None


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 0.99), min_size=3, max_size=60), st.floats(1e-4, 1.0))
def test_increasing_sequences_never_trigger(values, delta):
    seq = sorted(values)
    assert replay_switch_step(SwitchPolicy.adaptive(delta, 1), seq) is None


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 0.99), min_size=1, max_size=60), st.integers(1, 40), st.floats(1e-4, 0.5))
def test_fix_step_floor(values, fix_step, delta):
    k = replay_switch_step(SwitchPolicy.adaptive(delta, fix_step), [None] + values, first_tau=1)
    assert k is None or k >= max(fix_step, 2)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.floats(0.0, 0.99), min_size=1, max_size=60), st.floats(1e-4, 0.2), st.floats(1e-4, 0.2))
def test_delta_monotonicity(values, d1, d2):
    lo, hi = sorted((d1, d2))
    n = len(values) + 1
    a = replay_switch_step(SwitchPolicy.adaptive(hi, 5), [None] + values, 1)
    b = replay_switch_step(SwitchPolicy.adaptive(lo, 5), [None] + values, 1)
    assert (a if a is not None else n) <= (b if b is not None else n)


def test_fixed_ignores_distances():
    rng = np.random.default_rng(0)
    d = [None] + list(rng.uniform(0, 1, 49))
    assert replay_switch_step(SwitchPolicy.fixed(10), d, first_tau=1) == 10
    assert replay_switch_step(SwitchPolicy.immediate(), d, first_tau=1) == 1
    assert replay_switch_step(SwitchPolicy.never(), d, first_tau=1) is None


def test_observe_on_latents_and_contract():
    state = SwitchState()
    policy = SwitchPolicy.fixed(3)
    x = np.ones((1, 2, 2))
    assert observe(state, policy, x) == CONTINUE and state.d_curr is None
    assert observe(state, policy, 2 * x) == CONTINUE
    assert state.d_curr == pytest.approx(math.tanh(1.0))
    assert observe(state, policy, 3 * x) == SWITCH_NOW
    assert state.switched and state.switch_step == 3
    with pytest.raises(SwitchContractError):
        observe(state, policy, x)
    assert state.switched


def test_observe_copies_latent():
    state = SwitchState()
    x = np.ones((1, 2, 2))
    observe(state, SwitchPolicy.never(), x)
    x[:] = 5.0
    assert np.all(state.prev_latent == 1.0)


@pytest.mark.parametrize(
    "text,expected",
    [
        ("adaptive:delta=0.01,fix_step=5", SwitchPolicy.adaptive(0.01, 5)),
        ("adaptive:delta=0.03", SwitchPolicy.adaptive(0.03, 5)),
        ("fixed:step=10", SwitchPolicy.fixed(10)),
        ("never", SwitchPolicy.never()),
        ("immediate", SwitchPolicy.immediate()),
        ("quality", PRESETS["quality"]),
        ("speed", SwitchPolicy.adaptive(0.03, 5)),
    ],
)
def test_parse_policy(text, expected):
    assert parse_policy(text) == expected
    assert parse_policy(str(expected)) == expected


@pytest.mark.parametrize(
    "text",
    ["adaptive:delta=0", "adaptive:delta=-1", "adaptive:delta=nan", "adaptive:delta=inf", "adaptive:fix_step=0",
     "fixed", "fixed:step=-1", "fixed:at=3", "never:x=1", "sometimes", "adaptive:delta"],
)
def test_parse_policy_rejects(text):
    with pytest.raises(ValueError):
        parse_policy(text)


def test_predicted_speedup_values():
    assert predicted_speedup(50, 50, 8.0, 1.0) == 1.0
    assert abs(predicted_speedup(10, 50, 8.0, 1.0) - 400 / 120) < 1e-12
    assert predicted_speedup(0, 50, 8.0, 1.0) == 8.0
    with pytest.raises(ValueError):
        predicted_speedup(51, 50, 8.0, 1.0)
