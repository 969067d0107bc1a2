from __future__ import annotations

import json
import math

import numpy as np
import pytest

from sketchrender.dataset import Condition
from sketchrender.denoiser import Denoiser, DenoiserConfig, FingerprintError, flops_per_step, init_denoiser, init_params
from sketchrender.metrics import psnr
from sketchrender.pipeline import (
    TRACE_COLUMNS,
    PerturbationSpec,
    SampleRequest,
    SampleTrace,
    SamplingAbortedError,
    decode,
    default_schedule,
    initial_latent,
    perturbed_sample,
    sample_cooperative,
    sample_single,
    traces_to_csv,
)
from sketchrender.schedule import make_plan, scheduler_step
from sketchrender.switching import SwitchPolicy

COND = Condition("triangle", 3)

# 16-pixel single-layer nets: FLOPs = 2 * (16 w + 16 w), so widths 8 and 1 give ratio exactly 8
RATIO8_SKETCH = DenoiserConfig(widths=(8,), stem_channels=0, input_shape=(1, 4, 4))
RATIO8_RENDER = DenoiserConfig(widths=(1,), stem_channels=0, input_shape=(1, 4, 4))


def _manual_chain(models_by_tau, req: SampleRequest, guided: bool):
    """Independent re-implementation of the guided DDIM loop."""
    sched = default_schedule()
    shape = models_by_tau(0).config.input_shape
    z = initial_latent(req.seed, shape)
    for tau, t, t_prev in make_plan(sched, req.steps).steps():
        m = models_by_tau(tau)
        if guided:
            cond = m.predict(z[None], t, np.array([req.condition.id]))[0]
            unc = m.predict(z[None], t, np.array([12]))[0]
            eps = unc + req.guidance_scale * (cond - unc)
        else:
            eps = m.predict(z[None], t, np.array([req.condition.id]))[0]
        z = scheduler_step(eps, t, t_prev, z, sched, "ddim", 0.0, None, True).astype(np.float32)
    return z


def test_guidance_one_equals_plain_conditional_chain(tiny_pair):
    sk, _ = tiny_pair
    req = SampleRequest(COND, 4, guidance_scale=1.0, steps=20)
    z, tr = sample_single(sk, req)
    assert np.array_equal(z, _manual_chain(lambda tau: sk, req, guided=False))
    assert tr.total_flops == 20 * flops_per_step(sk.config)


def test_guided_loop_matches_manual(tiny_pair):
    sk, _ = tiny_pair
    req = SampleRequest(COND, 4, guidance_scale=5.0, steps=20)
    z, tr = sample_single(sk, req)
    np.testing.assert_allclose(z, _manual_chain(lambda tau: sk, req, guided=True), atol=1e-5)
    assert tr.total_flops == 2 * 20 * flops_per_step(sk.config)


def test_repeat_is_bit_identical(tiny_pair):
    sk, _ = tiny_pair
    req = SampleRequest(COND, 9, steps=25)
    assert np.array_equal(sample_single(sk, req)[0], sample_single(sk, req)[0])
    ddpm = SampleRequest(COND, 9, steps=1000, mode="ddpm")
    a, b = sample_single(sk, ddpm)[0], sample_single(sk, ddpm)[0]
    assert np.array_equal(a, b)


def test_seed_changes_sample(tiny_pair):
    sk, _ = tiny_pair
    assert not np.array_equal(sample_single(sk, SampleRequest(COND, 1, steps=10))[0],
                              sample_single(sk, SampleRequest(COND, 2, steps=10))[0])


def test_never_is_sketch_only(tiny_pair):
    sk, rd = tiny_pair
    req = SampleRequest(COND, 3, steps=30)
    a, ta = sample_single(sk, req)
    b, tb = sample_cooperative(sk, rd, req.with_policy(SwitchPolicy.never()))
    assert np.array_equal(a, b)
    assert tb.switch_step is None and {s.model for s in tb.steps} == {"sketch"}
    assert [s.d_t for s in ta.steps] == [s.d_t for s in tb.steps]


def test_immediate_runs_one_sketch_step_then_render(tiny_pair):
    sk, rd = tiny_pair
    req = SampleRequest(COND, 3, steps=30, policy=SwitchPolicy.immediate())
    z, tr = sample_cooperative(sk, rd, req)
    assert tr.switch_step == 1
    assert [s.model for s in tr.steps] == ["sketch"] + ["render"] * 29
    np.testing.assert_allclose(z, _manual_chain(lambda tau: sk if tau == 0 else rd, req, guided=True), atol=1e-5)


def test_fixed_zero_is_render_only(tiny_pair):
    sk, rd = tiny_pair
    req = SampleRequest(COND, 3, steps=30)
    z, tr = sample_cooperative(sk, rd, req.with_policy(SwitchPolicy.fixed(0)))
    assert np.array_equal(z, sample_single(rd, req)[0])
    assert tr.switch_step == 0


def test_fixed_ten_flop_accounting_ratio_eight():
    sk, rd = init_denoiser(RATIO8_SKETCH, 0), init_denoiser(RATIO8_RENDER, 1)
    fs, fr = flops_per_step(sk.config), flops_per_step(rd.config)
    assert fs == 8 * fr
    req = SampleRequest(Condition("circle", 0), 0, steps=50, policy=SwitchPolicy.fixed(10))
    _, tr = sample_cooperative(sk, rd, req)
    assert tr.switch_step == 10
    assert tr.total_flops == 2 * (10 * fs + 40 * fr)
    _, base = sample_single(sk, req)
    assert abs(base.total_flops / tr.total_flops - 10 / 3) < 1e-9


def test_trace_structure(tiny_pair):
    sk, rd = tiny_pair
    req = SampleRequest(COND, 5, steps=50, policy=SwitchPolicy.adaptive(0.01, 5))
    _, tr = sample_cooperative(sk, rd, req)
    assert len(tr.steps) == 50
    assert [s.tau for s in tr.steps] == list(range(50))
    assert tr.steps[0].d_t is None and all(s.d_t is not None for s in tr.steps[1:])
    assert tr.steps[1].d_deriv is None
    assert all(0.0 <= s.d_t < 1.0 for s in tr.steps[1:])
    for a, b in zip(tr.steps[1:], tr.steps[2:]):
        assert b.d_deriv == pytest.approx(a.d_t - b.d_t, abs=1e-15)
    k = tr.switch_step if tr.switch_step is not None else 50
    assert all(s.model == "sketch" for s in tr.steps[:k]) and all(s.model == "render" for s in tr.steps[k:])
    fs, fr = 2 * flops_per_step(sk.config), 2 * flops_per_step(rd.config)
    assert tr.total_flops == k * fs + (50 - k) * fr


def test_fingerprint_mismatch_refused(tiny_pair):
    sk, rd = tiny_pair
    other = Denoiser(rd.config, rd.params, fingerprint="0" * 16)
    with pytest.raises(FingerprintError):
        sample_cooperative(sk, other, SampleRequest(COND, 0, steps=5, policy=SwitchPolicy.immediate()))


def test_nan_latent_aborts_with_step():
    cfg = DenoiserConfig(widths=(4,))
    p = init_params(cfg, 0)
    p["head.b"] = np.full_like(p["head.b"], np.nan)
    with pytest.raises(SamplingAbortedError) as err:
        sample_single(Denoiser(cfg, p), SampleRequest(COND, 0, steps=5))
    assert err.value.tau == 0


def test_request_validation():
    with pytest.raises(ValueError):
        SampleRequest(COND, 0, steps=1)
    with pytest.raises(ValueError):
        SampleRequest(COND, 0, guidance_scale=0.5)
    with pytest.raises(ValueError):
        SampleRequest(COND, 0, eta=-1.0)


def test_zero_perturbation_is_identity(tiny_pair):
    sk, _ = tiny_pair
    req = SampleRequest(COND, 2, steps=20)
    assert np.array_equal(perturbed_sample(sk, req, PerturbationSpec((0, 20), 0.0, 0.0))[0], sample_single(sk, req)[0])


def test_perturbation_window_checked(tiny_pair):
    sk, _ = tiny_pair
    req = SampleRequest(COND, 2, steps=20)
    for w in ((-1, 5), (5, 21), (6, 5)):
        with pytest.raises(ValueError):
            perturbed_sample(sk, req, PerturbationSpec(w, 0.3))
    with pytest.raises(ValueError):
        perturbed_sample(sk, req, PerturbationSpec((0, 5), 0.3, sigma=-1.0))


def test_late_perturbation_changes_pixels(sketch_model):
    req = SampleRequest(COND, 0)
    base = decode(sample_single(sketch_model, req)[0])
    pert = decode(perturbed_sample(sketch_model, req, PerturbationSpec((10, 50), 0.3))[0])
    p = psnr(pert, base)
    assert math.isfinite(p) and p < psnr(base, base)


def test_perturbation_noise_stream_is_separate(tiny_pair):
    sk, _ = tiny_pair
    req = SampleRequest(COND, 2, steps=20)
    a = perturbed_sample(sk, req, PerturbationSpec((5, 6), 0.0, 0.5))[0]
    b = perturbed_sample(sk, req, PerturbationSpec((5, 6), 0.0, 0.5))[0]
    assert np.array_equal(a, b)


def test_trace_serialisation(tiny_pair):
    sk, rd = tiny_pair
    _, tr = sample_cooperative(sk, rd, SampleRequest(COND, 1, steps=8, policy=SwitchPolicy.fixed(3)))
    tr.run_id = "r1"
    back = SampleTrace.from_dict(json.loads(tr.to_json()))
    assert back.to_dict() == tr.to_dict()
    lines = traces_to_csv([tr]).splitlines()
    assert lines[0] == ",".join(TRACE_COLUMNS)
    assert len(lines) == 9
    assert lines[1].startswith("r1,0,1000,sketch,,,")
