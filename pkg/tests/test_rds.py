import math

import pytest
import torch

from d3gm.brownian import base_shift, brownian_path
from d3gm.errors import DomainError, HorizonError
from d3gm.forward import ProcessParams, simulate_forward
from d3gm.rds import (
    FlowMap,
    LyapunovSpec,
    additive_noise,
    attractor_radius,
    check_cocycle,
    check_negative_definite,
    expected_lyapunov_curve,
    flow,
    linear_drift,
    lyapunov_contraction_rate,
    lyapunov_lv,
    process_drift,
    process_noise,
    pullback_attractor_estimate,
    window_theta_bar,
)
from d3gm.schedules import DecoupledVolatility, Schedule
from d3gm.utils import DTYPE

PAIRS = [(0.1, 0.5), (0.2, 0.9), (0.0, 1.0)]


def fmap(kind="constant", theta=1.0, lam=1.0, tau=1.0, d=1, mu=0.0, volatility=None):
    return FlowMap(ProcessParams([mu] * d, lam, tau), Schedule(kind, theta), volatility)


class TestFlow:
    def test_zero_length_is_identity(self):
        w = brownian_path(42, 0, 100, 0.01, 1)
        x = torch.tensor([1.5], dtype=DTYPE)
        assert torch.equal(flow(fmap("cosine"), 0.3, 0.3, w, x), x)

    def test_semigroup(self):
        f = fmap("cosine", lam=2.0, tau=1.5)
        w = brownian_path(42, 0, 100, 0.01, 1)
        x = torch.tensor([3.0], dtype=DTYPE)
        direct = flow(f, 0.8, 0.1, w, x)
        composed = flow(f, 0.8, 0.4, w, flow(f, 0.4, 0.1, w, x))
        torch.testing.assert_close(direct, composed, rtol=0, atol=1e-12)

    def test_from_zero_matches_forward(self):
        f = fmap("linear", lam=1.0, tau=2.0)
        w = brownian_path(42, 2, 100, 0.01, 1)
        traj = simulate_forward([1.0], f.params, f.sched, 100, w)
        torch.testing.assert_close(flow(f, 1.0, 0.0, w, [1.0]), traj.terminal, rtol=0, atol=1e-14)

    def test_backwards_rejected(self):
        with pytest.raises(DomainError):
            flow(fmap(), 0.2, 0.5, brownian_path(42, 0, 100, 0.01, 1), [0.0])


class TestCocycle:
    def test_constant_holds(self):
        report = check_cocycle(fmap("constant", lam=2.0), PAIRS, [1.0], n_paths=20)
        assert report.holds
        assert report.max_deviation <= 1e-9

    @pytest.mark.parametrize("kind", ["linear", "cosine", "quadratic", "log"])
    def test_time_dependent_violated(self, kind):
        report = check_cocycle(fmap(kind, lam=2.0), PAIRS[:2], [1.0], n_paths=20)
        assert report.verdict == "violated"
        assert all(dev > 1e-9 for _, _, dev in report.pairs)

    def test_decoupled_constant_holds(self):
        f = fmap("constant", volatility=DecoupledVolatility(3.0))
        assert f.mode == "decoupled"
        assert check_cocycle(f, PAIRS, [0.5], n_paths=5).holds

    def test_report_json(self):
        report = check_cocycle(fmap(), [(0.1, 0.5)], [1.0], n_paths=3)
        d = report.to_dict()
        assert d["verdict"] == "holds" and d["pairs"][0]["s"] == 0.1
        assert '"verdict": "holds"' in report.to_json()

    @pytest.mark.parametrize("pair", [(0.5, 0.5), (0.6, 0.2), (-0.1, 0.4)])
    def test_bad_pairs(self, pair):
        with pytest.raises(DomainError):
            check_cocycle(fmap(), [pair], [0.0], n_paths=2)

    def test_base_shift_group(self):
        w = brownian_path(42, 0, 100, 0.01, 1)
        a = base_shift(base_shift(w, 0.25), 0.35).window(0, 100)
        b = base_shift(w, 0.6).window(0, 100)
        assert torch.equal(a, b)
        with pytest.raises(HorizonError):
            base_shift(w, 1.01)


class TestPullback:
    def test_converges_to_stationary_law(self):
        f = fmap("constant", lam=1.0, tau=1.0, mu=2.0)
        est = pullback_attractor_estimate(f, [[-20.0], [0.0], [20.0]], [-2.0, -5.0, -10.0], n_paths=2000)
        assert est.window_ok
        assert est.marginal.mean.item() == pytest.approx(2.0, abs=0.1)
        # Euler-Maruyama stationary variance is 2 dt / (1 - (1 - dt)^2) for unit coefficients
        assert est.marginal.variance == pytest.approx(0.02 / 0.0199, rel=0.15)

    def test_distance_shrinks_with_every_window(self):
        f = fmap("constant", lam=1.0, tau=1.0, mu=2.0)
        est = pullback_attractor_estimate(f, [[-20.0], [2.0], [24.0]], [-0.5, -1.0, -2.0, -3.0, -4.0], n_paths=500)
        distances = [h[3] for h in est.history]
        assert len(distances) == 5
        for earlier, later in zip(distances, distances[1:]):
            assert later < earlier

    def test_starting_points_synchronise(self):
        f = fmap("constant", theta=2.0, lam=1.0)
        far = pullback_attractor_estimate(f, [[-50.0], [50.0]], [-10.0], n_paths=50)
        near = pullback_attractor_estimate(f, [[0.0]], [-10.0], n_paths=50)
        # same noise, so every start collapses onto the same pullback point
        torch.testing.assert_close(far.marginal.mean, near.marginal.mean, rtol=0, atol=1e-6)

    def test_short_window_flagged(self):
        f = fmap("cosine", theta=1.0)
        est = pullback_attractor_estimate(f, [[0.0]], [-0.5], n_paths=10)
        assert not est.window_ok

    def test_start_times_must_be_negative(self):
        with pytest.raises(DomainError):
            pullback_attractor_estimate(fmap(), [[0.0]], [0.0], n_paths=2)

    def test_window_theta_bar_extends_frozen(self):
        s = Schedule("linear", 2.0)
        assert window_theta_bar(s, 0.5) == pytest.approx(0.25)
        assert window_theta_bar(s, 3.0) == pytest.approx(1.0 + 2.0 * 2.0)

    def test_attractor_radius(self):
        assert attractor_radius(ProcessParams([0.0], 10.0, 2.0), Schedule()) == 20.0
        p = ProcessParams([0.0], 1.0, 1.0)
        r = attractor_radius(p, Schedule("constant", 2.0), DecoupledVolatility(2.0))
        assert r == pytest.approx(1.0)


class TestLyapunov:
    def test_ou_generator(self):
        z = torch.tensor([0.3, -1.2], dtype=DTYPE)
        lv = lyapunov_lv(linear_drift(1.0), additive_noise(0.0), torch.eye(2, dtype=DTYPE), z, 0.0)
        assert lv == pytest.approx(-2 * (z @ z).item())

    def test_noise_floor(self):
        z = torch.zeros(3, dtype=DTYPE)
        lv = lyapunov_lv(linear_drift(1.0), additive_noise(0.5), torch.eye(3, dtype=DTYPE), z, 0.0)
        assert lv == pytest.approx(0.25 * 3)

    def test_noiseless_negative_definite(self):
        spec = LyapunovSpec(torch.eye(2, dtype=DTYPE), radius=2.0, resolution=11)
        report = check_negative_definite(spec, linear_drift(1.0), additive_noise(0.0))
        assert report.holds
        assert report.worst_value < 0
        assert lyapunov_contraction_rate(spec, linear_drift(1.0), additive_noise(0.0)) == pytest.approx(2.0)

    def test_noise_breaks_definiteness(self):
        spec = LyapunovSpec(torch.eye(2, dtype=DTYPE), radius=2.0, resolution=11)
        report = check_negative_definite(spec, linear_drift(1.0), additive_noise(1.0))
        assert report.verdict == "violated"
        assert math.sqrt(sum(v * v for v in report.worst_point)) < 1.0

    def test_process_generator(self):
        f = fmap("cosine", theta=1.0, lam=1.0, tau=2.0, d=2)
        spec = LyapunovSpec(torch.eye(2, dtype=DTYPE), radius=1.0, resolution=5, times=(0.5,))
        report = check_negative_definite(spec, process_drift(f), process_noise(f))
        assert report.verdict == "violated"
        z = torch.tensor([1.0, 0.0], dtype=DTYPE)
        th = 1 - math.cos(0.5)
        expected = -2 * th + 2 * (2 * math.sqrt(2 * th)) ** 2
        assert lyapunov_lv(process_drift(f), process_noise(f), spec.Q, z, 0.5) == pytest.approx(expected)

    def test_high_dimensional_points(self):
        spec = LyapunovSpec(torch.eye(6, dtype=DTYPE), radius=1.0, resolution=4)
        pts = spec.points()
        assert pts.shape[1] == 6
        norms = pts.norm(dim=1)
        assert (norms >= 0.01 - 1e-12).all() and (norms <= 1.0 + 1e-12).all()

    @pytest.mark.parametrize("Q", [[[1.0, 0.5], [0.0, 1.0]], [[1.0, 0.0], [0.0, -1.0]], [[1.0, 2.0, 3.0]]])
    def test_invalid_q(self, Q):
        with pytest.raises(DomainError):
            LyapunovSpec(Q)

    def test_expected_curve_decays_to_noise_level(self):
        f = fmap("constant", theta=5.0, lam=0.5, tau=1.0)
        times, values = expected_lyapunov_curve(f, [[1.0]], [4.0], 200, 4000, seed=3)
        assert values[0].item() == pytest.approx(16.0)
        assert values[-1].item() == pytest.approx(0.25, rel=0.1)
        assert times[-1].item() == pytest.approx(1.0)
