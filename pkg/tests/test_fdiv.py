import numpy as np
import pytest

from gofar.fdiv import (CHI2, KL, FDivergence, by_name, conjugate_oracle,
                        divergence, f_star_deriv, f_star_value, f_value,
                        weight)


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        FDivergence("hellinger")


def test_by_name_roundtrip():
    assert by_name(CHI2).kind == CHI2
    assert by_name(KL).kind == KL


def test_generator_zero_at_one():
    for kind in (CHI2, KL):
        assert f_value(FDivergence(kind), 1.0) == 0.0


def test_generator_rejects_negative_ratio():
    with pytest.raises(ValueError):
        f_value(FDivergence(CHI2), -0.5)


def test_generator_convexity_midpoints():
    rng = np.random.default_rng(0)
    for kind in (CHI2, KL):
        div = FDivergence(kind)
        for _ in range(50):
            x1, x2 = rng.uniform(0.0, 5.0, 2)
            mid = f_value(div, 0.5 * (x1 + x2))
            assert mid <= 0.5 * (f_value(div, x1) + f_value(div, x2)) + 1e-12


def test_chi2_conjugate_matches_grid_oracle():
    # the analytic convention (y+1)^2/2 is the conjugate over unrestricted
    # x; over ratios x >= 0 it exceeds the grid oracle by exactly 1/2 for
    # y >= -1
    div = FDivergence(CHI2)
    step = 1e-4
    for y in np.linspace(-1.0, 5.0, 25):
        val, arg = conjugate_oracle(div, float(y), x_max=50.0, step=step)
        assert abs(val + 0.5 - f_star_value(div, y)) <= 2 * step
        assert abs(arg - max(0.0, f_star_deriv(div, y))) <= 2 * step


def test_kl_conjugate_matches_grid_oracle():
    div = FDivergence(KL)
    step = 1e-4
    for y in np.linspace(-1.0, 3.0, 17):
        val, arg = conjugate_oracle(div, float(y), x_max=50.0, step=step)
        assert abs(val - f_star_value(div, y)) <= 2 * step
        assert abs(arg - f_star_deriv(div, y)) <= 2 * step


def test_chi2_weight_clamps_at_zero():
    div = FDivergence(CHI2)
    y = np.array([-3.0, -1.0, 0.0, 2.0])
    assert np.allclose(weight(div, y), [0.0, 0.0, 1.0, 3.0])


def test_kl_weight_positive_and_shift_invariant_after_normalizing():
    div = FDivergence(KL)
    y = np.array([-1.0, 0.0, 4.0])
    w = weight(div, y)
    assert (w > 0).all()
    w2 = weight(div, y + 7.0)
    assert np.allclose(w / w.sum(), w2 / w2.sum())


def test_divergence_zero_iff_equal():
    rng = np.random.default_rng(1)
    p = rng.dirichlet(np.ones(6))
    q = rng.dirichlet(np.ones(6))
    for kind in (CHI2, KL):
        div = FDivergence(kind)
        assert divergence(p, p, div) == pytest.approx(0.0, abs=1e-12)
        assert divergence(p, q, div) > 0


def test_divergence_chi2_closed_form():
    rng = np.random.default_rng(2)
    p = rng.dirichlet(np.ones(5))
    q = rng.dirichlet(np.ones(5))
    expected = 0.5 * np.sum((p - q) ** 2 / q)
    assert divergence(p, q, FDivergence(CHI2)) == pytest.approx(expected)


def test_divergence_support_violation():
    with pytest.raises(ValueError, match="support"):
        divergence([0.5, 0.5], [1.0, 0.0], FDivergence(KL))
