"""The nine typed injectors and the synthetic benchmark generator."""
import json

import numpy as np
import pytest

from tsdiag.core import AnomalyType, Interval
from tsdiag.errors import DegenerateSigma, NoPeriod
from tsdiag.inject import (
    INJECTORS,
    Injection,
    export_benchmark,
    generate_benchmark,
    inject_amplitude_change,
    inject_contextual_point,
    inject_global_point,
    inject_mean_change,
    inject_pattern_shift,
    inject_seasonality,
    inject_trend_change,
    inject_variance_change,
    inject_waveform_distortion,
    load_benchmark,
)


def _sin_base(n=400, seed=0, noise=0.1):
    rng = np.random.default_rng(seed)
    return np.sin(2 * np.pi * np.arange(n) / 20) + noise * rng.standard_normal(n)


def _noise_base(n=400, seed=0):
    return np.random.default_rng(seed).standard_normal(n)


def test_injectors_cover_all_nine_types():
    assert set(INJECTORS) == set(AnomalyType)


def test_global_point_exact_magnitude():
    for seed in range(20):
        x = _noise_base(seed=seed)
        sigma = x.std()
        out, inj = inject_global_point(x, seed)
        assert 1 <= len(inj.ground_truth) <= 3
        for iv in inj.ground_truth:
            assert iv.start == iv.end
            assert abs(abs(out[iv.start] - x[iv.start]) - 5 * sigma) < 1e-9
            assert 5 <= iv.start < x.size - 5
        positions = [iv.start for iv in inj.ground_truth]
        for a, b in zip(positions, positions[1:]):
            assert b - a >= 10


def test_global_point_constant_input_degenerate():
    with pytest.raises(DegenerateSigma):
        inject_global_point(np.full(400, 1.0), 0)


def test_contextual_point_exact_local_shift():
    for seed in range(20):
        x = _sin_base(seed=seed)
        out, inj = inject_contextual_point(x, seed)
        w = int(inj.params["window"])
        assert w == max(10, x.size // 20)
        for k, iv in enumerate(sorted(inj.ground_truth)):
            i = iv.start
            lo = max(0, i - w // 2)
            hi = min(x.size, i - w // 2 + w)
            local_std = x[lo:hi].std()
            assert abs(abs(out[i] - x[i]) - 3 * local_std) < 1e-9


def test_amplitude_change_doubles_second_half_std():
    for seed in range(20):
        x = _sin_base(seed=seed)
        out, inj = inject_amplitude_change(x, seed)
        half = x.size // 2
        assert inj.ground_truth == (Interval(half, x.size - 1),)
        assert abs(out[half:].std() - 2.0 * x[half:].std()) < 1e-9
        assert np.array_equal(out[:half], x[:half])


def test_seasonality_variant_b_moments():
    hit = False
    for seed in range(40):
        x = _sin_base(seed=seed)
        out, inj = inject_seasonality(x, seed)
        if inj.params["variant_b"] != 1.0:
            continue
        hit = True
        half = x.size // 2
        s = x[half:].std()
        sigma = x.std()
        expected = np.sqrt((0.15 * s) ** 2 + (0.15 * sigma) ** 2)
        assert abs(out[half:].std() - expected) < 0.25 * expected
    assert hit


def test_seasonality_variant_a_shifts_period():
    from tsdiag.tools.spectral import autocorrelation_split

    hit = False
    for seed in range(40):
        x = _sin_base(seed=seed, noise=0.05)
        out, inj = inject_seasonality(x, seed)
        if inj.params["variant_b"] != 0.0:
            continue
        hit = True
        r = autocorrelation_split(out)
        assert r.dominant_period_first is not None
        assert r.dominant_period_second is not None
        ratio = r.dominant_period_second / r.dominant_period_first
        assert abs(ratio - 1 / 2.5) < 0.15
    assert hit


def test_seasonality_no_period_falls_back_to_variant_b():
    for seed in range(10):
        x = _noise_base(seed=seed)
        out, inj = inject_seasonality(x, seed)
        assert inj.params["variant_b"] == 1.0


def test_trend_change_exact_final_offset():
    for seed in range(20):
        x = _noise_base(seed=seed)
        out, inj = inject_trend_change(x, seed)
        n = x.size
        half = n // 2
        s = inj.params["slope"]
        assert abs(s) >= max(0.05 * x.std(), 0.05) - 1e-12
        assert abs((out[n - 1] - x[n - 1]) - s * (n - 1 - half)) < 1e-9
        assert np.array_equal(out[:half], x[:half])


def test_trend_change_reverses_strong_trend():
    t = np.arange(400, dtype=float)
    rng = np.random.default_rng(31)
    x = 0.1 * t + 0.5 * rng.standard_normal(400)
    for seed in range(10):
        _, inj = inject_trend_change(x, seed)
        assert inj.params["slope"] < 0


def test_mean_change_exact_shift_and_cp_range():
    for seed in range(20):
        x = _noise_base(seed=seed)
        out, inj = inject_mean_change(x, seed)
        n = x.size
        cp = int(inj.params["change_point"])
        assert 0.4 * n <= cp <= 0.6 * n
        diff = out[cp:] - x[cp:]
        assert abs(abs(diff.mean()) - 1.5 * x.std()) < 1e-9
        assert np.allclose(diff, diff[0])
        assert np.array_equal(out[:cp], x[:cp])


def test_variance_change_exact_scale_mean_preserved():
    for seed in range(20):
        x = _noise_base(seed=seed)
        out, inj = inject_variance_change(x, seed)
        cp = int(inj.params["change_point"])
        factor = inj.params["factor"]
        assert factor in (2.0, 2.5)
        assert abs(out[cp:].std() - factor * x[cp:].std()) < 1e-9
        assert abs(out[cp:].mean() - x[cp:].mean()) < 1e-9


def test_pattern_shift_preserves_value_multiset():
    x = _sin_base(seed=3, noise=0.05)
    out, inj = inject_pattern_shift(x, 3)
    half = x.size // 2
    assert np.allclose(np.sort(out[half:]), np.sort(x[half:]))
    assert np.array_equal(out[:half], x[:half])


def test_pattern_shift_quarter_period_lag():
    n = 400
    x = np.sin(2 * np.pi * np.arange(n) / 20)
    out, inj = inject_pattern_shift(x, 0)
    p = int(inj.params["period"])
    assert p == 20
    half = n // 2
    a = x[half:]
    b = out[half:]
    lags = range(-p, p + 1)
    xcorr = [np.correlate(np.roll(b, -lag), a)[0] for lag in lags]
    best = list(lags)[int(np.argmax(xcorr))]
    assert abs(best) == p // 4


def test_pattern_shift_aperiodic_raises():
    with pytest.raises(NoPeriod):
        inject_pattern_shift(_noise_base(seed=4), 0)


def test_waveform_distortion_band_and_flat_base():
    x = _sin_base(seed=5)
    out, inj = inject_waveform_distortion(x, 5)
    n = x.size
    lo, hi = int(0.4 * n), int(0.7 * n)
    region = x[lo:hi]
    mu, s = region.mean(), region.std()
    assert out[lo:hi].min() >= mu - 0.5 * s - 1e-12
    assert out[lo:hi].max() <= mu + 0.5 * s + 1e-12
    assert out[lo:hi].std() <= region.std()
    flat = np.full(400, 2.0)
    out2, _ = inject_waveform_distortion(flat, 0)
    assert np.array_equal(out2, flat)


def test_injectors_leave_outside_ground_truth_unchanged():
    for atype, fn in INJECTORS.items():
        if atype in (AnomalyType.SEASONALITY_ANOMALY,):
            continue
        x = _sin_base(seed=6)
        try:
            out, inj = fn(x, 6)
        except NoPeriod:
            continue
        mask = np.ones(x.size, dtype=bool)
        for iv in inj.ground_truth:
            mask[iv.start : iv.end + 1] = False
        assert np.array_equal(out[mask], x[mask]), atype


def test_injector_determinism():
    for atype, fn in INJECTORS.items():
        x = _sin_base(seed=7)
        try:
            out1, inj1 = fn(x, 42)
            out2, inj2 = fn(x, 42)
        except NoPeriod:
            continue
        assert np.array_equal(out1, out2)
        assert inj1 == inj2


def test_generate_benchmark_counts_and_labels():
    samples = generate_benchmark(per_type=4, seed=0)
    assert len(samples) == 36
    per_type = {}
    for series, inj in samples:
        per_type[inj.type] = per_type.get(inj.type, 0) + 1
        assert series.labels is not None and series.labels.sum() >= 1
        from tsdiag.core import labels_to_segments

        assert labels_to_segments(series.labels) == sorted(inj.ground_truth)
    assert all(c == 4 for c in per_type.values())


def test_generate_benchmark_seed_determinism():
    a = generate_benchmark(per_type=2, seed=9)
    b = generate_benchmark(per_type=2, seed=9)
    for (sa, ia), (sb, ib) in zip(a, b):
        assert np.array_equal(sa.values, sb.values)
        assert ia == ib
    c = generate_benchmark(per_type=2, seed=10)
    assert any(not np.array_equal(sa.values, sc.values)
               for (sa, _), (sc, _) in zip(a, c))


def test_injection_json_roundtrip():
    _, inj = inject_mean_change(_noise_base(seed=8), 8)
    assert Injection.from_json(json.loads(json.dumps(inj.to_json()))) == inj


def test_export_and_load_benchmark_roundtrip(tmp_path):
    samples = generate_benchmark(per_type=2, seed=11)
    out = tmp_path / "bench"
    manifest = export_benchmark(samples, str(out))
    assert (out / "manifest.json").exists()
    loaded = load_benchmark(str(out))
    assert len(loaded) == len(samples)
    for (s0, i0), (s1, i1) in zip(samples, loaded):
        assert np.allclose(s0.values, s1.values)
        assert np.array_equal(s0.labels, s1.labels)
        assert s0.series_id == s1.series_id
        assert i0.type == i1.type and i0.ground_truth == i1.ground_truth
