import math

import pytest
import torch

from d3gm.errors import DomainError, SingularScheduleError
from d3gm.schedules import (
    CoupledVolatility,
    DecoupledVolatility,
    Schedule,
    ScheduleKind,
    sigma_at,
    sigma_max,
    stationary_ratio,
    theta_at,
    theta_bar,
    theta_bar_quadrature,
)
from d3gm.utils import DTYPE

ALL_KINDS = [k.value for k in ScheduleKind]


class TestThetaAt:
    def test_constant(self):
        assert theta_at(Schedule("constant", 1.0), 0.5) == 1.0

    def test_linear(self):
        assert theta_at(Schedule("linear", 2.0), 1.0) == 2.0

    def test_cosine_at_pi(self):
        s = Schedule("cosine", 1.0, t_end=math.pi)
        assert theta_at(s, math.pi) == pytest.approx(2.0, rel=1e-15)

    def test_quadratic_and_log(self):
        assert theta_at(Schedule("quadratic", 3.0), 0.5) == pytest.approx(0.75)
        s = Schedule("log", 1.0, k=10.0)
        assert theta_at(s, 0.3) == pytest.approx(math.exp(3) / (1 + math.exp(3)))

    def test_positive_inside_horizon(self):
        for kind in ALL_KINDS:
            s = Schedule(kind, 1.5)
            t = torch.linspace(0.01, 1.0, 100, dtype=DTYPE)
            assert (theta_at(s, t) > 0).all(), kind

    def test_tensor_in_tensor_out(self):
        t = torch.tensor([0.1, 0.2, 0.3], dtype=DTYPE)
        out = theta_at(Schedule("linear", 2.0), t)
        assert isinstance(out, torch.Tensor) and out.shape == t.shape

    @pytest.mark.parametrize("t", [-0.1, 1.5, float("nan")])
    def test_outside_horizon(self, t):
        with pytest.raises(DomainError):
            theta_at(Schedule(), t)


class TestThetaBar:
    def test_constant(self):
        assert theta_bar(Schedule("constant", 1.0), 1.0) == 1.0

    def test_cosine_at_pi(self):
        s = Schedule("cosine", 1.0, t_end=math.pi)
        assert theta_bar(s, math.pi) == pytest.approx(math.pi, rel=1e-12)

    def test_log_starts_at_zero(self):
        assert theta_bar(Schedule("log", 1.0, k=10.0), 0.0) == 0.0

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_matches_quadrature(self, kind):
        g = torch.Generator().manual_seed(7)
        for _ in range(5):
            theta = 0.2 + 2.5 * torch.rand(1, generator=g).item()
            k = 1.0 + 20 * torch.rand(1, generator=g).item()
            t = torch.rand(1, generator=g).item()
            s = Schedule(kind, theta, k)
            closed = theta_bar(s, t)
            assert abs(closed - theta_bar_quadrature(s, t)) / max(1.0, closed) < 1e-10

    def test_cosine_small_argument(self):
        s = Schedule("cosine", 1.0)
        t = 1e-5
        assert theta_bar(s, t) == pytest.approx(t**3 / 6, rel=1e-9)

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_strictly_increasing(self, kind):
        t = torch.linspace(0.0, 1.0, 500, dtype=DTYPE)
        tb = theta_bar(Schedule(kind, 1.0), t)
        assert tb[0].item() == 0.0
        assert (tb[1:] > tb[:-1]).all()


class TestVolatility:
    def test_coupled_constant(self):
        assert sigma_at(CoupledVolatility(1.0), Schedule("constant", 2.0), 0.3) == pytest.approx(2.0)

    def test_coupled_default_lambda(self):
        assert sigma_at(CoupledVolatility(10.0), Schedule("constant", 0.5), 0.9) == pytest.approx(10.0)

    def test_decoupled_passthrough(self):
        assert sigma_at(DecoupledVolatility(3.0), Schedule(), 0.4) == 3.0

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_coupling_ratio(self, kind):
        s = Schedule(kind, 1.3, 7.0)
        v = CoupledVolatility(2.5)
        t = torch.rand(1000, generator=torch.Generator().manual_seed(3), dtype=DTYPE) * 0.99 + 0.01
        ratio = sigma_at(v, s, t) ** 2 / (2 * theta_at(s, t))
        torch.testing.assert_close(ratio, torch.full_like(ratio, 6.25), rtol=1e-13, atol=0)

    def test_decoupled_table_interpolates(self):
        v = DecoupledVolatility([(0.0, 1.0), (1.0, 3.0)])
        s = Schedule("constant")
        assert sigma_at(v, s, 0.5) == pytest.approx(2.0)
        t = torch.tensor([0.0, 0.25, 1.0], dtype=DTYPE)
        torch.testing.assert_close(sigma_at(v, s, t), torch.tensor([1.0, 1.5, 3.0], dtype=DTYPE))

    def test_decoupled_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            DecoupledVolatility(0.0)

    def test_stationary_ratio_singular(self):
        with pytest.raises(SingularScheduleError):
            stationary_ratio(DecoupledVolatility(1.0), Schedule("linear"), 0.0)

    def test_sigma_max_constant(self):
        s = Schedule("constant", 2.0)
        assert sigma_max(CoupledVolatility(1.0), s, 1.0, tau=2.0) == pytest.approx(4.0)


class TestScheduleValidation:
    def test_unknown_kind(self):
        with pytest.raises(DomainError):
            Schedule("sawtooth")

    def test_cosine_must_not_vanish(self):
        with pytest.raises(DomainError):
            Schedule("cosine", 7.0)

    def test_kind_is_case_insensitive(self):
        assert Schedule("Linear").kind is ScheduleKind.LINEAR

    def test_nonpositive_theta(self):
        with pytest.raises(DomainError):
            Schedule("constant", 0.0)
