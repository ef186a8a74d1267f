import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gradcheck import directional
from simbav2 import tensor as T
from simbav2.errors import ConfigError, DimensionError, NumericError, UsageError
from simbav2.hypersphere import (
    HypersphereLinear,
    LerpBlock,
    Scaler,
    default_scaler,
    init_orthonormal,
    lerp,
    project_weights,
    project_weights_inplace,
    shift_embed,
    sphere_exp,
)

RNG = np.random.default_rng(7)


def unit_rows(n, d, rng=RNG):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# ---------------------------------------------------------------- shift embedding
def test_shift_embed_origin():
    np.testing.assert_allclose(shift_embed(np.zeros(2), 3.0).data, [0, 0, 1], atol=1e-15)


def test_shift_embed_345():
    np.testing.assert_allclose(shift_embed(np.array([4.0, 0.0]), 3.0).data, [0.8, 0, 0.6], rtol=1e-12)


def test_shift_embed_keeps_magnitude():
    a = shift_embed(np.array([1.0, 0.0]), 3.0).data
    b = shift_embed(np.array([2.0, 0.0]), 3.0).data
    assert not np.allclose(a, b)


def test_shift_embed_rejects_nonpositive_shift():
    with pytest.raises(ConfigError):
        shift_embed(np.zeros(2), 0.0)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-1e3, 1e3)), st.floats(0.1, 10))
def test_shift_embed_unit_and_positive_last(o, c):
    out = shift_embed(o, c).data
    assert abs(np.linalg.norm(out) - 1.0) < 1e-9
    assert out[-1] > 0


# ---------------------------------------------------------------- scaler
def test_scaler_initial_multiplier_is_init():
    s = Scaler(4, init=0.3, scale=0.05)
    np.testing.assert_array_equal(s.stored.data, 0.05)
    np.testing.assert_allclose(s.multiplier(), 0.3, rtol=1e-15)


def test_scaler_unit_is_identity():
    s = Scaler(3, 1.0, 1.0)
    x = RNG.standard_normal((2, 3))
    np.testing.assert_array_equal(s(x).data, x)


def test_default_scaler_value_for_512():
    assert default_scaler(512)[0] == 0.0625


def test_scaler_gradient_reaches_stored_only():
    s = Scaler(3, 0.5, 0.1)
    x = T.Tensor(RNG.standard_normal((2, 3)))
    T.tsum(s(x)).backward()
    np.testing.assert_allclose(s.stored.grad, x.data.sum(0) * 5.0, rtol=1e-12)
    assert x.grad is None


def test_scaler_dimension_mismatch():
    with pytest.raises(UsageError):
        Scaler(3, 1.0, 1.0)(np.ones(4))


# ---------------------------------------------------------------- linear layer
def test_identity_layer_preserves_unit_input():
    layer = HypersphereLinear(3, 3, (1.0, 1.0), seed=0)
    layer.W.data = np.eye(3)
    h = unit_rows(1, 3)
    np.testing.assert_allclose(layer(h, renormalize=True).data, h, atol=1e-15)


def test_renormalized_output_is_unit():
    layer = HypersphereLinear(6, 5, default_scaler(5), seed=1)
    out = layer(RNG.standard_normal((10, 6)), renormalize=True).data
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-9)


def test_linear_shape_mismatch():
    with pytest.raises(DimensionError):
        HypersphereLinear(4, 3, None, seed=0)(np.ones((2, 5)))


def test_scaled_output_norm_monte_carlo_matches_one_over_fan_in():
    """E|s * W h|^2 for square orthonormal W: |Wh| = 1 exactly, so the mean is s^2 * d = 2."""
    d = 64
    layer = HypersphereLinear(d, d, default_scaler(d), seed=2)
    out = layer(unit_rows(2000, d)).data
    np.testing.assert_allclose(np.mean((out * out).sum(1)), 2.0 / d * 1.0, rtol=1e-9)


# ---------------------------------------------------------------- LERP block
def test_lerp_alpha_zero_is_identity():
    h = unit_rows(3, 4)
    np.testing.assert_allclose(lerp(h, unit_rows(3, 4), np.zeros(4)).data, h, atol=1e-15)


def test_lerp_alpha_one_is_candidate():
    h, ht = unit_rows(3, 4), unit_rows(3, 4)
    np.testing.assert_allclose(lerp(h, ht, np.ones(4)).data, ht, atol=1e-15)


def test_lerp_symmetric_example():
    out = lerp(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]), np.full(2, 0.5)).data
    np.testing.assert_allclose(out, [[math.sqrt(0.5), math.sqrt(0.5)]], rtol=1e-12)


def test_lerp_block_formula_and_unit_output():
    block = LerpBlock(8, num_blocks=2, seed=3)
    h = unit_rows(5, 8)
    out = block(h).data
    x = np.maximum((h @ block.mlp_in.W.data.T) * block.mlp_in.scaler.multiplier(), 0)
    ht = x @ block.mlp_out.W.data.T
    ht /= np.linalg.norm(ht, axis=1, keepdims=True)
    a = block.alpha.multiplier()
    ref = (1 - a) * h + a * ht
    ref /= np.linalg.norm(ref, axis=1, keepdims=True)
    np.testing.assert_allclose(out, ref, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-6)


def test_lerp_alpha_default_is_one_over_l_plus_one():
    for L in (1, 2, 3):
        block = LerpBlock(16, num_blocks=L, seed=0)
        np.testing.assert_allclose(block.alpha.multiplier(), 1.0 / (L + 1), rtol=1e-15)
        np.testing.assert_allclose(block.alpha.stored.data, 1.0 / 4.0, rtol=1e-15)


def test_lerp_block_gradients():
    block = LerpBlock(4, 1, seed=4)
    h = unit_rows(3, 4)
    w = RNG.standard_normal((3, 4))
    err = directional(lambda: T.tsum(block(h) * w), block.parameters(), RNG)
    assert err < 1e-6


def test_lerp_retraction_is_second_order():
    """Distance to the exact geodesic point shrinks quadratically in alpha."""
    rng = np.random.default_rng(11)
    h = unit_rows(1, 16, rng)[0]
    ht = unit_rows(1, 16, rng)[0]
    tangent = ht - h * (h @ ht)
    errs = []
    for a in (1e-2, 1e-3):
        approx = lerp(h[None], ht[None], np.full(16, a)).data[0]
        errs.append(np.linalg.norm(approx - sphere_exp(h, a * tangent)))
    ratio = errs[1] / errs[0]
    assert 0.005 <= ratio <= 0.02


# ---------------------------------------------------------------- projection / init
def test_project_row():
    np.testing.assert_array_equal(project_weights(np.array([[2.0, 0.0]])), [[1.0, 0.0]])


def test_project_idempotent_and_unit():
    w = RNG.standard_normal((7, 5))
    p = project_weights(w)
    np.testing.assert_allclose(np.linalg.norm(p, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(project_weights(p), p, atol=1e-12)
    q = w.copy()
    project_weights_inplace(q)
    np.testing.assert_allclose(q, p, atol=1e-15)


def test_project_zero_row_is_numeric_error():
    with pytest.raises(NumericError):
        project_weights(np.array([[0.0, 0.0], [1.0, 0.0]]))


def test_orthonormal_square():
    w = init_orthonormal(4, 4, seed=0)
    np.testing.assert_allclose(w.T @ w, np.eye(4), atol=1e-9)


def test_orthonormal_tall_rows_unit():
    w = init_orthonormal(8, 4, seed=0)
    np.testing.assert_allclose(np.linalg.norm(w, axis=1), 1.0, atol=1e-12)


def test_orthonormal_wide_rows_orthonormal():
    w = init_orthonormal(3, 6, seed=0)
    np.testing.assert_allclose(w @ w.T, np.eye(3), atol=1e-12)


def test_orthonormal_deterministic():
    np.testing.assert_array_equal(init_orthonormal(5, 3, seed=9), init_orthonormal(5, 3, seed=9))
