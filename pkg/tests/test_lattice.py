import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lattice_vortex.lattice import (LatticeSpec, backward_diff, curl_backward, curl_forward,
                                    div_backward, div_forward, forward_diff, laplacian6)
from lattice_vortex.vortex import Plaquette, VortexState, apply_plaquette

SPEC4 = LatticeSpec(4)
finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
fields4 = arrays(np.float64, SPEC4.field_shape, elements=finite)


def test_spec_geometry():
    s = LatticeSpec(8)
    assert s.h * s.N == 1.0
    assert s.field_shape == (3, 8, 8, 8)
    assert s.n_plaquettes == 3 * 512
    assert s.wrap((8, -1, 17)) == (0, 7, 1)
    with pytest.raises(ValueError):
        LatticeSpec(1)
    with pytest.raises(ValueError):
        LatticeSpec(2.5)


def test_field_shape_checked():
    with pytest.raises(ValueError):
        laplacian6(np.zeros((3, 4, 4, 5)), SPEC4)


def test_laplacian_constant_and_delta():
    np.testing.assert_allclose(laplacian6(np.full(SPEC4.field_shape, 3.7), SPEC4), 0.0, atol=1e-12)
    f = SPEC4.zeros()
    f[0, 1, 2, 3] = 1.0
    out = laplacian6(f, SPEC4)
    h2 = SPEC4.h ** 2
    expected = SPEC4.zeros()
    expected[0, 1, 2, 3] = -6.0 / h2
    for d in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
        expected[(0, *SPEC4.wrap((1 + d[0], 2 + d[1], 3 + d[2])))] = 1.0 / h2
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-12)


@pytest.mark.parametrize("N", [4, 5, 8])
def test_laplacian_fourier_eigenvalue(N):
    spec = LatticeSpec(N)
    i = np.arange(N)[:, None, None] * np.ones(spec.shape)
    f = spec.zeros()
    f[0] = np.sin(2 * np.pi * i / N)
    lam = -(2 - 2 * np.cos(2 * np.pi / N)) / spec.h ** 2
    np.testing.assert_allclose(laplacian6(f, spec), lam * f, atol=1e-9 * abs(lam))


def test_curl_constant_and_unrolled_component():
    assert np.all(curl_forward(np.full(SPEC4.field_shape, 2.0), SPEC4) == 0.0)
    N, h = SPEC4.N, SPEC4.h
    j = np.arange(N)[None, :, None] * np.ones(SPEC4.shape)
    psi = SPEC4.zeros()
    psi[2] = np.sin(2 * np.pi * j / N)
    u = curl_forward(psi, SPEC4)
    np.testing.assert_allclose(u[0], (np.roll(psi[2], -1, axis=1) - psi[2]) / h, atol=1e-12)
    np.testing.assert_allclose(u[1:], 0.0, atol=1e-12)


def test_difference_definitions():
    f = np.arange(64.0).reshape(4, 4, 4) ** 2
    h = 0.25
    assert forward_diff(f, 0, h)[1, 2, 3] == (f[2, 2, 3] - f[1, 2, 3]) / h
    assert backward_diff(f, 2, h)[1, 2, 0] == (f[1, 2, 0] - f[1, 2, 3]) / h


@settings(max_examples=25, deadline=None)
@given(fields4)
def test_div_curl_identities(psi):
    scale = max(1.0, np.max(np.abs(psi))) / SPEC4.h ** 2
    assert np.max(np.abs(div_forward(curl_forward(psi, SPEC4), SPEC4))) <= 1e-13 * scale
    assert np.max(np.abs(div_backward(curl_backward(psi, SPEC4), SPEC4))) <= 1e-13 * scale


def test_div_backward_of_forward_curl_is_not_zero():
    # Mixed forward-curl / backward-div does not commute to zero on the lattice.
    rng = np.random.default_rng(0)
    psi = rng.standard_normal(SPEC4.field_shape)
    assert np.max(np.abs(div_backward(curl_forward(psi, SPEC4), SPEC4))) > 1e-3


def test_curl_backward_is_adjoint():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((2, *SPEC4.field_shape))
    lhs = np.sum(curl_forward(a, SPEC4) * b)
    rhs = np.sum(a * curl_backward(b, SPEC4))
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


def test_div_of_constant_and_loop():
    assert np.all(div_backward(np.ones(SPEC4.field_shape), SPEC4) == 0.0)
    st_ = VortexState(SPEC4, 1.0)
    for plane in range(3):
        apply_plaquette(st_, Plaquette(3, 0, 1, plane, 1))
    assert np.all(div_backward(st_.vorticity(), SPEC4) == 0.0)


@settings(max_examples=20, deadline=None)
@given(fields4, fields4)
def test_laplacian_symmetric(f, g):
    lhs = np.sum(f * laplacian6(g, SPEC4))
    rhs = np.sum(laplacian6(f, SPEC4) * g)
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, np.sum(np.abs(f)) * np.sum(np.abs(g)))


@settings(max_examples=20, deadline=None)
@given(fields4, fields4, finite, finite)
def test_operators_linear(f, g, a, b):
    for op in (laplacian6, curl_forward, curl_backward):
        lhs = op(a * f + b * g, SPEC4)
        rhs = a * op(f, SPEC4) + b * op(g, SPEC4)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9 * max(1.0, np.max(np.abs(lhs))))


@settings(max_examples=10, deadline=None)
@given(fields4, st.integers(0, 2))
def test_full_period_shift_invariance(f, axis):
    g = np.roll(f, SPEC4.N, axis=1 + axis)
    for op in (laplacian6, curl_forward, div_backward, div_forward):
        assert np.array_equal(op(f, SPEC4), op(g, SPEC4))
