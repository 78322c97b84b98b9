import json
import math
import warnings

import numpy as np
import pytest
import scipy.integrate
import scipy.signal
from hypothesis import given, settings
from hypothesis import strategies as st

from fbcap import ChannelModel, build_model, noise_autocovariance, noise_psd, step_channel
from fbcap.errors import ChannelError, UnitCircleZeroWarning


def quad_autocov(model, k):
    f = lambda w: noise_psd(model, w) * math.cos(k * w)
    val, _ = scipy.integrate.quad(f, 0.0, math.pi, limit=400, epsabs=1e-13, epsrel=1e-13)
    return val / math.pi


def test_companion_structure():
    m = build_model([0.2, -0.1, 0.3], [0.1, 0.2, 0.05], 2.0)
    A = np.array([[0.2, -0.1, 0.3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    np.testing.assert_array_equal(m.A, A)
    np.testing.assert_array_equal(m.b, [1.0, 0.0, 0.0])
    np.testing.assert_allclose(m.h, [0.3, 0.1, 0.35], rtol=1e-15)
    assert m.L == 3


def test_arrays_are_read_only():
    m = build_model([0.5], [0.3], 1.0)
    with pytest.raises(ValueError):
        m.a[0] = 2.0


@pytest.mark.parametrize(
    "a, c, s2, msg",
    [
        ([0.5], [0.3, 0.1], 1.0, "equal length"),
        ([0.5], [0.3], 0.0, "sigma_w2"),
        ([0.5], [0.3], -1.0, "sigma_w2"),
        ([0.5], [1.2], 1.0, "pole"),
        ([2.0], [0.3], 1.0, "zero"),
        ([float("nan")], [0.3], 1.0, "finite"),
    ],
)
def test_rejects_invalid(a, c, s2, msg):
    with pytest.raises(ChannelError, match=msg):
        build_model(a, c, s2)


def test_unit_circle_zero_warns_and_is_flagged():
    with pytest.warns(UnitCircleZeroWarning):
        m = build_model([0.0, 0.6, 0.4], [0.5, 0.4, 0.0], 1.0)
    assert m.unit_circle_zero
    assert np.max(m.zero_radii) == pytest.approx(1.0, abs=1e-12)


def test_awgn_has_order_zero():
    m = build_model([], [], 1.5)
    assert m.L == 0 and m.is_white
    assert noise_autocovariance(m, 3) == pytest.approx([1.5, 0, 0, 0], abs=1e-12)


def test_config_round_trip(tmp_path):
    m = build_model([0.5, 0.1], [0.2, -0.3], 0.7)
    path = tmp_path / "ch.json"
    path.write_text(json.dumps(m.to_config()))
    m2 = ChannelModel.from_json(path)
    np.testing.assert_array_equal(m2.a, m.a)
    np.testing.assert_array_equal(m2.c, m.c)
    assert m2.sigma_w2 == m.sigma_w2


@pytest.mark.parametrize("cfg, field", [({"a": [0.1], "sigma_w2": 1}, "c"), ({"a": 1, "c": [0], "sigma_w2": 1}, "a")])
def test_config_names_bad_field(cfg, field):
    with pytest.raises(ChannelError, match=f"'{field}'"):
        ChannelModel.from_config(cfg)


def test_psd_closed_form():
    m = build_model([0.5], [0.95], 2.0)
    w = np.linspace(-math.pi, math.pi, 9)
    z = np.exp(1j * w)
    expected = 2.0 * np.abs((1 - 0.5 / z) / (1 + 0.95 / z)) ** 2
    np.testing.assert_allclose(noise_psd(m, w), expected, rtol=1e-13)
    assert noise_psd(m, 0.3) == pytest.approx(float(noise_psd(m, np.array([0.3]))[0]))


def test_psd_nonnegative_on_grid():
    m = build_model([0.3, -0.2], [0.5, 0.2], 1.0)
    assert np.all(noise_psd(m, np.linspace(-math.pi, math.pi, 4096)) >= 0.0)


def test_white_autocovariance():
    m = build_model([0.0], [0.0], 1.0)
    R = noise_autocovariance(m, 5)
    assert R[0] == pytest.approx(1.0, abs=1e-9)
    assert np.max(np.abs(R[1:])) < 1e-9


def test_ar1_autocovariance_closed_form():
    m = build_model([0.0], [0.95], 1.0)
    R = noise_autocovariance(m, 10)
    R0 = 1.0 / (1 - 0.95**2)
    np.testing.assert_allclose(R, R0 * (-0.95) ** np.arange(11), rtol=1e-9, atol=1e-12)


def test_ma1_autocovariance_closed_form():
    m = build_model([0.5], [0.0], 1.0)
    R = noise_autocovariance(m, 4)
    np.testing.assert_allclose(R, [1.25, -0.5, 0, 0, 0], atol=1e-12)


@pytest.mark.parametrize("a, c", [([0.5], [0.95]), ([0.3, -0.2], [0.5, 0.2]), ([0.0, 0.6, 0.4], [0.5, 0.4, 0.0])])
def test_autocovariance_matches_quadrature(a, c):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnitCircleZeroWarning)
        m = build_model(a, c, 1.3)
    R = noise_autocovariance(m, 6)
    for k in range(7):
        assert R[k] == pytest.approx(quad_autocov(m, k), rel=1e-9, abs=1e-11)
    assert np.all(np.abs(R) <= R[0] + 1e-12)


def test_autocovariance_rejects_negative_lag():
    with pytest.raises(ValueError):
        noise_autocovariance(build_model([0.1], [0.1], 1.0), -1)


def test_time_domain_noise_matches_autocovariance():
    # N_t = W_t - sum a_l W_{t-l} - sum c_l N_{t-l}
    m = build_model([0.3, -0.2], [0.5, 0.2], 1.0)
    rng = np.random.default_rng(7)
    n = 1_000_000
    w = rng.standard_normal(n)
    noise = scipy.signal.lfilter(np.r_[1.0, -m.a], np.r_[1.0, m.c], w)[1000:]
    R = noise_autocovariance(m, 5)
    nb = 100
    for k in range(6):
        prod = noise[: noise.size - k] * noise[k:]
        prod = prod[: (prod.size // nb) * nb].reshape(nb, -1).mean(axis=1)
        se = prod.std(ddof=1) / math.sqrt(nb)
        assert abs(prod.mean() - R[k]) < 3 * se + 1e-12


def test_step_channel_examples():
    m = build_model([0.5], [0.95], 1.0)
    s, y = step_channel(m, np.zeros(1), 0.0, 0.0)
    assert s == pytest.approx([0.0]) and y == 0.0
    s, y = step_channel(m, np.array([1.0]), 2.0, 0.0)
    assert s == pytest.approx([2.5])
    assert y == pytest.approx(3.45)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(-3, 3), min_size=2, max_size=2),
    st.floats(-3, 3),
    st.floats(-3, 3),
    st.floats(-3, 3),
)
def test_step_channel_affine_in_x(s, x1, x2, w):
    m = build_model([0.2, 0.1], [0.3, -0.4], 1.0)
    s = np.array(s)
    _, y12 = step_channel(m, s, x1 + x2, w)
    _, y1 = step_channel(m, s, x1, w)
    assert y12 == pytest.approx(y1 + x2, abs=1e-12)


def test_state_space_is_whitened_channel():
    # y - w equals the input filtered by (1 + sum c z^-l) / (1 - sum a z^-l)
    m = build_model([0.4, -0.3], [0.2, 0.5], 1.0)
    rng = np.random.default_rng(3)
    x = rng.standard_normal(300)
    s = np.zeros(2)
    out = []
    for xt in x:
        s, y = step_channel(m, s, xt, 0.0)
        out.append(y)
    ref = scipy.signal.lfilter(np.r_[1.0, m.c], np.r_[1.0, -m.a], x)
    np.testing.assert_allclose(out, ref, atol=1e-10)


def test_accepted_models_have_stable_roots():
    rng = np.random.default_rng(0)
    accepted = 0
    for _ in range(200):
        a, c = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UnitCircleZeroWarning)
                m = build_model(a, c, 1.0)
        except ChannelError:
            continue
        accepted += 1
        assert np.all(np.abs(np.roots(np.r_[1.0, -m.a])) <= 1 + 1e-12)
        assert np.all(np.abs(np.roots(np.r_[1.0, m.c])) < 1)
    assert accepted > 20
