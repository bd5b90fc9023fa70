"""
アンサンブルとモデル汎関数のテスト
"""

import itertools
import math
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

# 親ディレクトリをパスに追加
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from kpzlab.dynamics import sample_initial
from kpzlab.errors import DisjointnessError, EmptyHyperplaneError, GradientConditionError, RatePositivityError
from kpzlab.ensembles import (
    AveragingSpec,
    EnsembleSpec,
    block_length,
    build_model,
    canonical_marginal_law,
    canonical_moment,
    check_rate_positivity,
    expect,
    expect_estimate,
    kipnis_varadhan_statistic,
    local_density,
    piecewise_integral,
    sample_canonical,
    scale_expectation,
    sigma_expectation_poly,
    snap_plus_count,
    spatial_average_parts,
)
from kpzlab.lattice import Configuration, LocalFunctional


def two_site(beta: float = 0.5) -> LocalFunctional:
    return LocalFunctional({(-1,): beta, (2,): beta})


def test_grand_canonical_product_measure():
    f = LocalFunctional.monomial([0, 1]) + 2.0 * LocalFunctional.spin(3)
    assert expect(f, EnsembleSpec.grand_canonical(0.3)) == pytest.approx(0.09 + 0.6)


def test_sigma_polynomial_coefficients():
    f = 1.5 + LocalFunctional.spin(0) - LocalFunctional.monomial([0, 2])
    poly = sigma_expectation_poly(f)
    assert list(poly.coeffs) == pytest.approx([1.5, 1.0, -1.0])
    assert poly(0.5) == pytest.approx(1.75)


def test_canonical_enumeration_matches_closed_form():
    f = two_site(0.3) * LocalFunctional.spin(0) + LocalFunctional.monomial([-1, 0, 1, 2], 0.2)
    for plus in range(0, 7):
        spec = EnsembleSpec.canonical_count((-2, 3), plus)
        exact = expect_estimate(f, spec, mode="exact").value
        closed = expect_estimate(f, spec, mode="closed_form").value
        assert exact == pytest.approx(closed, abs=1e-12)


def test_canonical_moment_single_spin():
    """1 サイトのカノニカル期待値は平均スピン"""
    assert canonical_moment(1, 4, 1) == pytest.approx(-0.5)
    assert canonical_moment(0, 10, 3) == 1.0
    with pytest.raises(EmptyHyperplaneError):
        canonical_moment(2, 4, 5)


def test_empty_hyperplane():
    with pytest.raises(EmptyHyperplaneError):
        EnsembleSpec.canonical(0.0, (0, 2))
    with pytest.raises(ValueError):
        EnsembleSpec.grand_canonical(1.5)


def test_support_outside_canonical_window():
    spec = EnsembleSpec.canonical_count((0, 3), 2)
    with pytest.raises(ValueError):
        expect(LocalFunctional.spin(5), spec)


def test_monte_carlo_within_error():
    f = LocalFunctional.monomial([0, 1])
    spec = EnsembleSpec.canonical_count((0, 5), 3)
    estimate = expect_estimate(f, spec, mode="monte_carlo", rng=np.random.default_rng(1), samples=20_000)
    assert not estimate.exact
    assert abs(estimate.value - canonical_moment(2, 6, 3)) <= 5 * estimate.se


@pytest.mark.parametrize("sigma", np.linspace(-0.9, 0.9, 7))
def test_grand_canonical_monte_carlo_matches_sigma_polynomial(sigma):
    rng = np.random.default_rng(int(round(100 * (sigma + 1))))
    functionals = [
        two_site(0.3) * LocalFunctional.spin(0) + LocalFunctional.monomial([-1, 0, 1, 2], 0.2),
        build_model(two_site(0.5)).qbar,
    ]
    for f in functionals:
        estimate = expect_estimate(f, EnsembleSpec.grand_canonical(sigma), mode="monte_carlo", rng=rng, samples=20_000)
        exact = sigma_expectation_poly(f)(sigma)
        assert abs(estimate.value - exact) <= 4 * estimate.se + 1e-12


@pytest.mark.parametrize("width, plus, sub_width", [(6, 2, 2), (9, 4, 3), (12, 5, 3), (12, 9, 4)])
def test_canonical_projection_is_hypergeometric_mixture(width, plus, sub_width):
    """部分窓への射影は、+ の個数の超幾何分布とその個数のカノニカル測度の混合"""
    spec = EnsembleSpec.canonical_count((0, width - 1), plus)
    law = canonical_marginal_law(width, plus, sub_width)
    for sub in itertools.product([1, -1], repeat=sub_width):
        indicator = LocalFunctional.constant(1.0)
        for x, s in enumerate(sub):
            indicator = indicator * (0.5 + 0.5 * s * LocalFunctional.spin(x))
        j = sub.count(1)
        mixture = stats.hypergeom(width, plus, sub_width).pmf(j) / math.comb(sub_width, j)
        enumerated = expect_estimate(indicator, spec, mode="exact").value
        mask = sum(1 << x for x, s in enumerate(sub) if s < 0)
        assert enumerated == pytest.approx(mixture, abs=1e-12)
        assert law[mask] == pytest.approx(mixture, abs=1e-12)


def test_sample_canonical_counts():
    samples = sample_canonical(10, 4, np.random.default_rng(0), 50)
    assert np.all((samples > 0).sum(axis=1) == 4)


def test_canonical_marginal_law_normalised():
    law = canonical_marginal_law(8, 3, 2)
    assert law.sum() == pytest.approx(1.0)
    assert law.size == 4


def test_snap_plus_count():
    k, snap = snap_plus_count(3, 0.0)
    assert k in (1, 2)
    assert snap == pytest.approx(0.5)
    assert snap_plus_count(4, 0.0) == (2, 0.0)


def test_model_constants_constant_d():
    """d ≡ c なら (d̄, R21, R23) = (0, -c/2, 0)"""
    c = 0.8
    model = build_model(LocalFunctional.constant(c))
    assert model.dbar == pytest.approx(0.0, abs=1e-12)
    assert model.R21 == pytest.approx(-c / 2, abs=1e-12)
    assert model.R23 == pytest.approx(0.0, abs=1e-12)
    n = 64
    expected = n / 2 - 1 / 24 + math.sqrt(n) * (-c / 2) + model.R22
    assert model.renormalization(n) == pytest.approx(expected)


def test_model_constants_two_site():
    """d = β(η_{-1} + η_2) なら (d̄, R21, R23) = (β, 0, -β/2)"""
    beta = 0.5
    model = build_model(two_site(beta))
    assert model.dbar == pytest.approx(beta, abs=1e-12)
    assert model.R21 == pytest.approx(0.0, abs=1e-12)
    assert model.R23 == pytest.approx(-beta / 2, abs=1e-12)
    assert model.R22 == pytest.approx(beta / 2)


@pytest.mark.parametrize("d", [LocalFunctional.constant(1.0), two_site(0.5), two_site(-0.3)])
def test_qbar_has_no_constant_or_linear_part(d):
    poly = sigma_expectation_poly(build_model(d).qbar)
    assert abs(poly.coefficient(0)) <= 1e-12
    assert abs(poly.coefficient(1)) <= 1e-12


def test_build_model_rejects_non_gradient():
    with pytest.raises(GradientConditionError):
        build_model(LocalFunctional.spin(0))


def test_rate_positivity():
    check_rate_positivity(64, 1.0)
    with pytest.raises(RatePositivityError):
        check_rate_positivity(2, 2.0)
    with pytest.raises(RatePositivityError):
        build_model(LocalFunctional.constant(5.0), n=4)


def test_block_length_tolerance():
    assert block_length(16, 0.5) == 4
    assert block_length(64, 0.5) == 8
    assert block_length(10, 0.5) == 4


def test_local_density_on_flat_configuration():
    cfg = Configuration(np.tile([1, -1], 8), zero_sum=True)
    assert local_density(cfg, 0.5, y=5, length=3) == pytest.approx(0.0)
    assert local_density(cfg, 0.5, y=0, length=2) == pytest.approx(1 / 3)


def test_spatial_average_stride_and_cutoff():
    cfg = Configuration(np.tile([1, -1], 8), zero_sum=True)
    f = LocalFunctional.monomial([0, 1])
    with pytest.raises(DisjointnessError):
        spatial_average_parts(f, cfg, 0, AveragingSpec(ell_av=4, stride=1))
    value, kept, removed = spatial_average_parts(f, cfg, 0, AveragingSpec(ell_av=4))
    assert value == pytest.approx(-1.0)
    assert kept + removed == pytest.approx(value)


def test_piecewise_integral():
    times = np.array([0.0, 1.0, 2.0])
    values = np.array([1.0, 2.0, 3.0])
    assert piecewise_integral(times, values, 0.0, 2.5) == pytest.approx(4.5)
    assert piecewise_integral(times, values, 0.5, 1.5) == pytest.approx(1.5)


def test_kipnis_varadhan_statistic_on_frozen_path():
    snapshots = np.tile(np.tile([1, -1], 8), (5, 1))
    times = np.linspace(0.0, 1.0, 5)
    f = LocalFunctional.monomial([0, 1])
    assert kipnis_varadhan_statistic(snapshots, times, f, 0.5, 4) == pytest.approx(-1.0)
    assert kipnis_varadhan_statistic(snapshots, times, LocalFunctional.spin(0), 0.5, 1) == pytest.approx(1.0)


def test_scale_ladder_telescopes():
    """ε 刻みの R_δ の和は最下段と最上段の E^can の差"""
    model = build_model(two_site(0.5))
    cfg = sample_initial("stationary_zero_sum", 256, 3)
    bottom, eps, steps = 0.375, 0.125, 3
    for y in (0, 37, 200):
        ladder = sum(scale_expectation("R", model, cfg, y, bottom + j * eps, eps) for j in range(steps))
        low = scale_expectation("can", model, cfg, y, bottom)
        high = scale_expectation("can", model, cfg, y, bottom + steps * eps)
        assert ladder == pytest.approx(low - high, abs=1e-12)
        fluctuation = scale_expectation("S", model, cfg, y, bottom)
        assert fluctuation + low == pytest.approx(model.qbar.evaluate(cfg, y), abs=1e-12)
