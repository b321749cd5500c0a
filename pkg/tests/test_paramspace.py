import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from valvetune.paramspace import (Bounds, DomainError, ParamVector, decode, decode_array,
                                  default_bounds, encode, encode_array, sample_uniform, to_pole_spec)

B = default_bounds()
unit = st.floats(0.0, 1.0, allow_nan=False)
point = st.lists(unit, min_size=4, max_size=4)


class TestPoleSpec:
    def test_fastest_controller_time(self):
        spec = to_pole_spec(ParamVector(0.06, 0.02, -1.0, -10.0))
        assert spec.p_ctr == pytest.approx(-100.0, rel=1e-15)

    def test_slowest_observer_time(self):
        spec = to_pole_spec(ParamVector(0.1, 0.04, -1.0, -10.0))
        assert spec.p_obs == pytest.approx(-150.0, rel=1e-15)

    def test_polynomial_expansion(self):
        spec = to_pole_spec(ParamVector(0.1, 0.02, -1.0, -10.0))
        assert spec.a2 == -11.0
        assert spec.a1 == -10.0

    @given(point)
    def test_nominal_poles_are_roots(self, u):
        theta = decode(np.array(u), B)
        spec = to_pole_spec(theta)
        for p in (theta.p1, theta.p2):
            # s^2 - a2 s - a1 vanishes at both nominal poles
            assert abs(p * p - spec.a2 * p - spec.a1) <= 1e-9 * max(1.0, p * p)
        roots = np.roots([1.0, -spec.a2, -spec.a1])
        assert np.all(roots.real < 0)
        assert spec.p_ctr < 0 and spec.p_obs < 0

    @pytest.mark.parametrize("field,value", [("t_set", 0.05), ("t_obs", 0.005), ("p1", -10.0),
                                             ("p2", -1.0), ("t_set", math.nan)])
    def test_out_of_bounds_names_dimension(self, field, value):
        kw = dict(t_set=0.1, t_obs=0.02, p1=-1.0, p2=-10.0)
        kw[field] = value
        with pytest.raises(DomainError) as err:
            to_pole_spec(ParamVector(**kw))
        assert err.value.dimension == field
        assert field in str(err.value)


class TestEncoding:
    def test_corners(self):
        lo = ParamVector(*B.lower)
        hi = ParamVector(*B.upper)
        np.testing.assert_array_equal(encode(lo, B), np.zeros(4))
        np.testing.assert_array_equal(encode(hi, B), np.ones(4))

    def test_log_midpoint(self):
        theta = ParamVector(0.1, 0.02, -math.exp(0.5), -math.exp(3.5))
        u = encode(theta, B)
        assert u[2] == pytest.approx(0.5, abs=1e-15)
        assert u[3] == pytest.approx(0.5, abs=1e-15)

    def test_linear_midpoint(self):
        u = encode(ParamVector(0.13, 0.025, -1.0, -20.0), B)
        np.testing.assert_allclose(u[:2], [0.5, 0.5], atol=1e-15)

    @given(point)
    def test_round_trip(self, u):
        theta = decode(np.array(u), B)
        back = decode(encode(theta, B), B)
        np.testing.assert_allclose(back.as_array(), theta.as_array(), rtol=1e-12)
        assert np.all(encode(theta, B) >= 0) and np.all(encode(theta, B) <= 1)

    def test_out_of_bounds_encode_raises(self):
        with pytest.raises(DomainError):
            encode(ParamVector(0.3, 0.02, -1.0, -10.0), B)

    def test_array_forms_match(self):
        rng = np.random.default_rng(0)
        U = rng.random((20, 4))
        T = decode_array(U, B)
        np.testing.assert_allclose(encode_array(T, B), U, atol=1e-12)


class TestSampling:
    def test_deterministic_and_in_bounds(self):
        a = sample_uniform(B, 10, seed=7)
        b = sample_uniform(B, 10, seed=7)
        assert a == b
        assert len(a) == 10
        for theta in a:
            to_pole_spec(theta)  # raises if out of bounds

    def test_encoded_mean(self):
        U = np.array([encode(t, B) for t in sample_uniform(B, 1000, seed=1)])
        np.testing.assert_allclose(U.mean(axis=0), 0.5, atol=0.05)

    def test_prefix_stable(self):
        assert sample_uniform(B, 3, seed=5) == sample_uniform(B, 8, seed=5)[:3]

    @pytest.mark.parametrize("n", [0, -1, 2.5])
    def test_invalid_count(self, n):
        with pytest.raises(ValueError):
            sample_uniform(B, n, seed=0)


class TestBounds:
    def test_lower_must_be_below_upper(self):
        with pytest.raises(DomainError) as err:
            Bounds((0.2, 0.01, -7.0, -100.0), (0.1, 0.04, -0.5, -8.0))
        assert err.value.dimension == "t_set"

    def test_log_interval_excludes_zero(self):
        with pytest.raises(DomainError):
            Bounds((0.06, 0.01, -1.0, -100.0), (0.2, 0.04, 1.0, -8.0))

    def test_dict_round_trip(self):
        assert Bounds.from_dict(B.to_dict()) == B

    def test_default_values(self):
        np.testing.assert_allclose(B.lower, [0.06, 0.01, -math.e**2, -math.e**5])
        np.testing.assert_allclose(B.upper, [0.2, 0.04, -math.exp(-1), -math.e**2])
