"""Similarity and efficiency metrics for sampled images and their traces."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from .dataset import Condition, semantic_oracle

PEAK = 1.0
OVERHEAD_FACTOR = 0.8


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a: np.ndarray, b: np.ndarray, peak: float = PEAK) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` when the inputs are identical."""
    if peak <= 0:
        raise ValueError("peak must be positive")
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def gaussian_window(size: int, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def ssim(
    a: np.ndarray,
    b: np.ndarray,
    window: int = 11,
    k1: float = 0.01,
    k2: float = 0.03,
    peak: float = PEAK,
    sigma: float = 1.5,
) -> float:
    """Mean SSIM over the fully-covered window positions (Gaussian window)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if window % 2 == 0 or window < 1:
        raise ValueError("window must be a positive odd integer")
    planes_a = a.reshape(-1, *a.shape[-2:])
    planes_b = b.reshape(-1, *b.shape[-2:])
    if window > min(planes_a.shape[-2:]):
        raise ValueError(f"window {window} larger than image {planes_a.shape[-2:]}")
    g = gaussian_window(window, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    maps = []
    for pa, pb in zip(planes_a, planes_b):
        mu_a = _filter_valid(pa, g)
        mu_b = _filter_valid(pb, g)
        var_a = _filter_valid(pa * pa, g) - mu_a * mu_a
        var_b = _filter_valid(pb * pb, g) - mu_b * mu_b
        cov = _filter_valid(pa * pb, g) - mu_a * mu_b
        num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
        den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
        maps.append(num / den)
    return float(np.mean(maps))


def _mean(xs: Sequence[float]) -> float:
    return math.fsum(xs) / len(xs) if xs else math.nan


def _std(xs: Sequence[float]) -> float:
    if not xs:
        return math.nan
    m = _mean(xs)
    return math.sqrt(math.fsum((x - m) ** 2 for x in xs) / len(xs))


def _median(xs: Sequence[float]) -> float:
    return float(np.median(sorted(xs))) if xs else math.nan


def quartiles(xs: Sequence[float]) -> tuple[float, float, float]:
    if not xs:
        return (math.nan, math.nan, math.nan)
    q = np.percentile(sorted(xs), [25, 50, 75])
    return (float(q[0]), float(q[1]), float(q[2]))


@dataclass
class MetricsReport:
    label: str
    count: int
    psnr_mean: float
    psnr_median: float
    psnr_std: float
    psnr_saturated: int
    ssim_mean: float
    ssim_median: float
    ssim_std: float
    mse_mean: float
    semantic_agreement: float
    condition_agreement: float
    latency_mean_nanos: float
    predicted_speedup: float
    measured_speedup: float
    overhead_flag: bool
    switch_q1: float
    switch_median: float
    switch_q3: float
    switch_mean: float

    @property
    def psnr_var(self) -> float:
        return self.psnr_std**2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["psnr_var"] = self.psnr_var
        return d

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), sort_keys=True)


REPORT_COLUMNS = tuple(f.name for f in fields(MetricsReport)) + ("psnr_var",)


def _jsonable(d: dict) -> dict:
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


def reports_to_csv(reports: Sequence[MetricsReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow({k: _fmt(v) for k, v in r.to_dict().items()})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else ("-inf" if v < 0 else "nan"))
    return v


def aggregate(traces, pairs, reference_traces=None, label: str = "", labels=None) -> MetricsReport:
    """Summarise candidate runs against their references.

    ``pairs`` holds ``(sample, reference)`` images aligned with ``traces``;
    ``reference_traces`` (defaulting to ``traces``) supply the baseline
    latency and FLOPs for the speedup columns. Runs that never switched count
    as switching at their final step. ``labels`` may carry precomputed
    ``(sample_label, reference_label)`` oracle results.
    """
    if len(traces) != len(pairs):
        raise ValueError("traces and pairs must align")
    if not traces:
        raise ValueError("nothing to aggregate")
    reference_traces = traces if reference_traces is None else reference_traces
    psnrs = [psnr(s, r) for s, r in pairs]
    finite = [p for p in psnrs if math.isfinite(p)]
    ssims = [ssim(s, r) for s, r in pairs]
    mses = [mse(s, r) for s, r in pairs]
    if labels is None:
        labels = [(semantic_oracle(s), semantic_oracle(r)) for s, r in pairs]
    agree = [1.0 if (ls.defined and ls.key() == lr.key()) else 0.0 for ls, lr in labels]
    cond_ok = []
    for tr, (ls, _) in zip(traces, labels):
        if tr.condition:
            cond_ok.append(1.0 if ls.matches(Condition.parse(tr.condition)) else 0.0)
    lat = [float(tr.total_wall_nanos) for tr in traces]
    ref_lat = [float(tr.total_wall_nanos) for tr in reference_traces]
    fl = [float(tr.total_flops) for tr in traces]
    ref_fl = [float(tr.total_flops) for tr in reference_traces]
    predicted = _mean(ref_fl) / _mean(fl) if _mean(fl) > 0 else math.nan
    measured = _mean(ref_lat) / _mean(lat) if _mean(lat) > 0 else math.nan
    switch = [float(tr.switch_step if tr.switch_step is not None else len(tr.steps)) for tr in traces]
    q1, q2, q3 = quartiles(switch)
    return MetricsReport(
        label=label,
        count=len(traces),
        psnr_mean=_mean(finite) if finite else math.inf,
        psnr_median=_median(finite) if finite else math.inf,
        psnr_std=_std(finite) if finite else 0.0,
        psnr_saturated=len(psnrs) - len(finite),
        ssim_mean=_mean(ssims),
        ssim_median=_median(ssims),
        ssim_std=_std(ssims),
        mse_mean=_mean(mses),
        semantic_agreement=_mean(agree),
        condition_agreement=_mean(cond_ok) if cond_ok else math.nan,
        latency_mean_nanos=_mean(lat),
        predicted_speedup=predicted,
        measured_speedup=measured,
        overhead_flag=bool(measured < OVERHEAD_FACTOR * predicted),
        switch_q1=q1,
        switch_median=q2,
        switch_q3=q3,
        switch_mean=_mean(switch),
    )
