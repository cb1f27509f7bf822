import numpy as np
import pytest

from petdiff.errors import DomainError, SingularityError
from petdiff.sde import (
    KarrasSchedule,
    VpSchedule,
    karras_sigma_steps,
    vp_kernel_moments,
    vp_perturb,
    vp_true_score,
)


def test_vp_constant_beta_moments():
    # beta(t) == 2 for all t, so the integral at t=1 is exactly 2
    sched = VpSchedule(beta_min=2.0, beta_max=2.0)
    m = vp_kernel_moments(sched, 1.0)
    assert m.mean_factor == pytest.approx(0.36787944117144233, rel=1e-14)
    assert m.std == pytest.approx(0.9298734950321937, rel=1e-14)


def test_vp_default_beta_moments():
    sched = VpSchedule(beta_min=0.1, beta_max=20.0)
    cases = {
        0.1: (0.946721798820598, 0.3220525355247045),
        0.5: (0.28118288079675235, 0.9596542020680363),
        1.0: (0.006571586494929619, 0.9999784068923386),
    }
    for t, (mean_factor, std) in cases.items():
        m = vp_kernel_moments(sched, t)
        assert m.mean_factor == pytest.approx(mean_factor, rel=1e-12)
        assert m.std == pytest.approx(std, rel=1e-12)


def test_vp_moments_limits_and_monotonicity():
    sched = VpSchedule(beta_min=0.1, beta_max=20.0)
    m0 = vp_kernel_moments(sched, 0.0)
    assert m0.mean_factor == 1.0
    assert m0.std == 0.0
    ts = np.linspace(0.0, 1.0, 101)
    mf = np.array([vp_kernel_moments(sched, t).mean_factor for t in ts])
    sd = np.array([vp_kernel_moments(sched, t).std for t in ts])
    assert np.all(np.diff(mf) < 0)
    assert np.all(np.diff(sd) > 0)
    # variance-preserving property: m^2 + std^2 == 1
    assert np.allclose(mf**2 + sd**2, 1.0, atol=1e-12)


def test_vp_schedule_validation():
    with pytest.raises(DomainError):
        VpSchedule(beta_min=-0.1, beta_max=20.0)
    with pytest.raises(DomainError):
        VpSchedule(beta_min=5.0, beta_max=1.0)
    with pytest.raises(DomainError):
        VpSchedule(t_min=0.5, t_max=0.4)
    sched = VpSchedule()
    with pytest.raises(DomainError):
        vp_kernel_moments(sched, -0.01)
    with pytest.raises(DomainError):
        vp_kernel_moments(sched, sched.t_max + 0.01)


def test_vp_drift_diffusion_consistency():
    sched = VpSchedule(beta_min=0.1, beta_max=20.0)
    for t in (0.05, 0.4, 0.9):
        b = sched.beta(t)
        assert b == pytest.approx(0.1 + t * 19.9, rel=1e-14)
        assert sched.diffusion(t) == pytest.approx(np.sqrt(b), rel=1e-14)
        x = np.array([1.0, -2.0])
        assert np.allclose(sched.drift(x, t), -0.5 * b * x)


def test_vp_perturb_is_deterministic_and_invertible():
    sched = VpSchedule()
    x0 = np.arange(12.0).reshape(3, 4)
    xt1, eps1 = vp_perturb(x0, 0.3, sched, np.random.default_rng(5))
    xt2, eps2 = vp_perturb(x0, 0.3, sched, np.random.default_rng(5))
    assert np.array_equal(xt1, xt2)
    assert np.array_equal(eps1, eps2)
    m = vp_kernel_moments(sched, 0.3)
    assert np.allclose(xt1, m.mean_factor * x0 + m.std * eps1, atol=1e-14)


def test_vp_perturb_monte_carlo_moments():
    # 1e5 draws from the perturbation kernel; mean and std both within 1%
    sched = VpSchedule(beta_min=0.1, beta_max=20.0)
    rng = np.random.default_rng(42)
    x0 = np.full(100_000, 2.0)
    for t in (0.1, 0.5, 1.0):
        m = vp_kernel_moments(sched, t)
        xt, _ = vp_perturb(x0, t, sched, rng)
        emp_mean = xt.mean()
        emp_std = xt.std()
        assert abs(emp_mean - m.mean_factor * 2.0) <= 0.01 * max(abs(m.mean_factor * 2.0), m.std)
        assert abs(emp_std - m.std) <= 0.01 * m.std


def test_vp_true_score_matches_noise_identity():
    sched = VpSchedule()
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=(4, 4))
    for t in (0.05, 0.5, 1.0):
        xt, eps = vp_perturb(x0, t, sched, rng)
        m = vp_kernel_moments(sched, t)
        score = vp_true_score(xt, x0, t, sched)
        assert np.allclose(score, -eps / m.std, atol=1e-10)
        assert np.allclose(score, -(xt - m.mean_factor * x0) / m.std**2, atol=1e-12)


def test_vp_true_score_singular_at_t0():
    sched = VpSchedule()
    with pytest.raises(SingularityError):
        vp_true_score(np.zeros(3), np.zeros(3), 0.0, sched)


def test_karras_sigma_steps_endpoints_and_interior():
    steps2 = karras_sigma_steps(KarrasSchedule(n_steps=2))
    assert np.allclose(steps2, [80.0, 0.002, 0.0], atol=1e-15)
    steps3 = karras_sigma_steps(KarrasSchedule(n_steps=3))
    assert steps3[0] == pytest.approx(80.0, rel=1e-14)
    assert steps3[1] == pytest.approx(2.515218976147159, rel=1e-12)
    assert steps3[2] == pytest.approx(0.002, rel=1e-12)
    assert steps3[3] == 0.0


def test_karras_sigma_steps_monotone_decreasing():
    steps = karras_sigma_steps(KarrasSchedule(n_steps=100))
    assert len(steps) == 101
    assert np.all(np.diff(steps) < 0)
    assert steps[-1] == 0.0


def test_karras_schedule_validation():
    with pytest.raises(DomainError):
        KarrasSchedule(sigma_min=-1.0)
    with pytest.raises(DomainError):
        KarrasSchedule(sigma_min=5.0, sigma_max=1.0)
    with pytest.raises(DomainError):
        KarrasSchedule(n_steps=1)
    with pytest.raises(DomainError):
        KarrasSchedule(rho=0.0)
