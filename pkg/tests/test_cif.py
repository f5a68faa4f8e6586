import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmbitcn import tensor as tn
from hmbitcn.cif import (
    CifConfig,
    CoefficientMode,
    ConfigError,
    apply_cif,
    apply_psf,
    cif_as_pairs,
    cif_coefficient_gradients,
    constrain_coefficients,
)
from hmbitcn.tensor import Tensor


def fusion_reference(x, t, n, a, b):
    """Line-by-line transcription of the fusion pseudocode."""
    front = x[:, :, :n]
    back = x[:, :, -n:]
    x_new = x.copy()
    added = front * a + back * b
    if t > 0:
        x_new[:, :, :n] = added
    else:
        x_new[:, :, -n:] = added
    return x_new


def one_row(vals):
    return np.array(vals, dtype=float).reshape(1, 1, -1)


def test_cif_hand_traces():
    x = one_row([1, 2, 3])
    np.testing.assert_array_equal(apply_cif(x, CifConfig(t=1, n=1, a=1, b=1)).ravel(), [4, 2, 3])
    np.testing.assert_array_equal(apply_cif(x, CifConfig(t=-1, n=1, a=1, b=1)).ravel(), [1, 2, 4])


def test_cif_identity_and_copy():
    x = np.random.default_rng(0).normal(size=(2, 5, 6))
    np.testing.assert_array_equal(apply_cif(x, CifConfig(t=1, n=3, a=1, b=0)), x)
    copied = apply_cif(x, CifConfig(t=1, n=2, a=0, b=1))
    np.testing.assert_array_equal(copied[:, :, :2], x[:, :, 4:])
    np.testing.assert_array_equal(copied[:, :, 2:], x[:, :, 2:])


def test_cif_does_not_mutate_input():
    x = np.random.default_rng(1).normal(size=(1, 4, 4))
    before = x.copy()
    apply_cif(x, CifConfig(t=1, n=2, a=2, b=3))
    np.testing.assert_array_equal(x, before)


@pytest.mark.parametrize("n", [0, 3])
def test_cif_rejects_bad_n(n):
    with pytest.raises(ConfigError):
        apply_cif(np.zeros((1, 2, 5)), CifConfig(t=1, n=n))


def test_cif_rejects_rank():
    with pytest.raises(tn.DimensionError):
        apply_cif(np.zeros((2, 5)), CifConfig())


def test_psf_examples():
    np.testing.assert_array_equal(apply_psf(one_row([1, 2, 3, 4]), [(0, 1, 0)], 1, 1).ravel(), [3, 2, 3, 4])
    x = one_row([1, 2, 3, 4])
    np.testing.assert_array_equal(apply_psf(x, [], 1, 1), x)
    np.testing.assert_array_equal(apply_psf(one_row([1, 2]), [(0, 1, 0)], 0, 1).ravel(), [2, 2])


def test_psf_validation():
    with pytest.raises(ConfigError):
        apply_psf(np.zeros((1, 2, 4)), [(0, 1, 0), (2, 3, 0)], 1, 1)
    with pytest.raises(ConfigError):
        apply_psf(np.zeros((1, 2, 4)), [(0, 4, 0)], 1, 1)


def test_psf_reads_original_channels():
    # swapping pairs must read the unfused input, not an already fused channel
    x = one_row([1.0, 10.0])
    np.testing.assert_array_equal(apply_psf(x, [(0, 1, 0), (1, 0, 1)], 1, 1).ravel(), [11, 11])


cif_cases = st.tuples(
    st.integers(1, 3),  # batch
    st.integers(1, 6),  # time
    st.integers(2, 9),  # channels
    st.integers(-2, 2),  # t
    st.floats(-3, 3, allow_nan=False),
    st.floats(-3, 3, allow_nan=False),
    st.integers(0, 2**31 - 1),
)


@settings(max_examples=200)
@given(cif_cases)
def test_cif_properties(case):
    B, T, C, t, a, b, seed = case
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, C // 2 + 1))
    x = rng.normal(size=(B, T, C))
    cfg = CifConfig(t=t, n=n, a=a, b=b)
    out = apply_cif(x, cfg)
    assert out.shape == x.shape
    np.testing.assert_array_equal(out, fusion_reference(x, t, n, a, b))
    fused = slice(0, n) if t > 0 else slice(C - n, C)
    keep = np.ones(C, bool)
    keep[fused] = False
    np.testing.assert_array_equal(out[:, :, keep], x[:, :, keep])
    np.testing.assert_array_equal(out, apply_psf(x, cif_as_pairs(cfg, C), a, b))
    np.testing.assert_allclose(apply_cif(2.5 * x, cfg), 2.5 * out, rtol=1e-13, atol=1e-13)


def test_tensor_path_matches_array_path():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 4, 7))
    for t in (1, -1):
        cfg = CifConfig(t=t, n=3, a=0.7, b=-1.2)
        via_tensor = apply_cif(Tensor(x), cfg, Tensor(0.7), Tensor(-1.2)).data
        np.testing.assert_array_equal(via_tensor, apply_cif(x, cfg))
    pairs = [(0, 5, 3), (2, 1, 6)]
    np.testing.assert_array_equal(apply_psf(Tensor(x), pairs, Tensor(2.0), 0.5).data, apply_psf(x, pairs, 2.0, 0.5))


def test_coefficient_gradients_hand_example():
    x = np.array([[[1.0, 3.0]], [[2.0, 4.0]]])  # B=2, T=1, C=2: X_i=[1,2], X_j=[3,4]
    cfg = CifConfig(t=1, n=1, a=1, b=1)
    assert cif_coefficient_gradients(np.ones((2, 1, 1)), x, cfg) == (3.0, 7.0)
    assert cif_coefficient_gradients(np.zeros((2, 1, 1)), x, cfg) == (0.0, 0.0)
    with pytest.raises(tn.DimensionError):
        cif_coefficient_gradients(np.ones((2, 1, 2)), x, cfg)


@pytest.mark.parametrize("t", [1, -1])
def test_coefficient_gradients_agree_with_backward_and_fd(t):
    rng = np.random.default_rng(9)
    x = rng.normal(size=(2, 5, 6))
    target = rng.normal(size=x.shape)
    cfg = CifConfig(t=t, n=2, a=0.8, b=-0.6)
    a = Tensor(0.8, requires_grad=True)
    b = Tensor(-0.6, requires_grad=True)

    def loss():
        out = apply_cif(x, cfg, a, b)
        return (tn.gelu(out) * target).sum()

    tn.backward(loss())
    # upstream gradient into the fused block, d loss / d out restricted to it
    xin = Tensor(apply_cif(x, cfg), requires_grad=True)
    tn.backward((tn.gelu(xin) * target).sum())
    block = xin.grad[:, :, :2] if t > 0 else xin.grad[:, :, 4:]
    ga, gb = cif_coefficient_gradients(block, x, cfg)
    assert abs(ga - a.grad) <= 1e-10 * max(1.0, abs(ga))
    assert abs(gb - b.grad) <= 1e-10 * max(1.0, abs(gb))
    assert tn.relative_error(a.grad, tn.numerical_gradient(loss, a)) < 1e-5
    assert tn.relative_error(b.grad, tn.numerical_gradient(loss, b)) < 1e-5


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_constrain_coefficients_signs(a, b):
    ca, cb = constrain_coefficients(a, b, CoefficientMode.LEARNABLE_COUPLING)
    assert ca > 0 and cb > 0
    sa, sb = constrain_coefficients(a, b, CoefficientMode.LEARNABLE_SUPPRESSION)
    assert sa > 0 and sb < 0
    assert constrain_coefficients(a, b, CoefficientMode.FIXED) == (a, b)


def test_constrain_keeps_valid_values():
    assert constrain_coefficients(0.5, -2.0, "learnable_suppression") == (0.5, -2.0)
    assert constrain_coefficients(-0.5, 2.0, "learnable_suppression") == (1e-6, -1e-6)


def test_learnable_config_sign_checks():
    with pytest.raises(ConfigError):
        CifConfig(a=1.0, b=-1.0, coefficient_mode="learnable_coupling")
    with pytest.raises(ConfigError):
        CifConfig(a=1.0, b=1.0, coefficient_mode="learnable_suppression")


def test_config_round_trip():
    cfg = CifConfig(t=-1, n=2, a=0.5, b=-0.25, coefficient_mode="learnable_suppression", pair_map=[(0, 1, 0)])
    assert CifConfig.from_dict(cfg.to_dict()) == cfg
