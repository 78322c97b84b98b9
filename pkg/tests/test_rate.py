import math

import numpy as np
import pytest

from fbcap import LOG2E, PolicyStage, Posterior, ShadowPrice, build_model, reward_omega, stage_power, stage_rate
from fbcap.rate import nats_to_bits, stage_power_uncentered


def test_awgn_rate_and_power():
    m = build_model([], [], 1.0)
    post = Posterior.known(m)
    st = PolicyStage([], 1.0)
    assert stage_rate(m, post.K, st) == pytest.approx(0.5 * math.log(2.0))
    assert stage_power(m, post, st) == 1.0
    assert nats_to_bits(stage_rate(m, post.K, st)) == pytest.approx(0.5)


def test_known_state_kills_memory():
    m = build_model([0.5], [0.95], 1.0)
    post = Posterior.known(m, [3.0])
    st = PolicyStage([10.0], 1.0)
    assert stage_rate(m, post.K, st) == pytest.approx(0.5 * math.log(2.0))
    assert stage_power(m, post, st) == 1.0


def test_rate_formula():
    m = build_model([0.3, 0.1], [0.2, 0.4], 2.0)
    K = np.array([[1.0, 0.2], [0.2, 0.5]])
    st = PolicyStage([0.5, -0.3], 0.7)
    hd = m.h + st.d
    expected = 0.5 * math.log((hd @ K @ hd + 0.49 + 2.0) / 2.0)
    assert stage_rate(m, K, st) == pytest.approx(expected, rel=1e-14)
    assert stage_power(m, Posterior(np.zeros(2), K), st) == pytest.approx(st.d @ K @ st.d + 0.49)


def test_uncentered_power_exceeds_centered():
    m = build_model([0.3], [0.2], 1.0)
    post = Posterior(np.array([2.0]), np.array([[0.4]]))
    st = PolicyStage([1.5], 0.5)
    centred = stage_power(m, post, st)
    assert stage_power_uncentered(m, post, st, -3.0) == pytest.approx(centred)
    assert stage_power_uncentered(m, post, st, 1.0) == pytest.approx(centred + 16.0)


def test_reward_and_price():
    m = build_model([], [], 1.0)
    post = Posterior.known(m)
    st = PolicyStage([], 1.0)
    assert reward_omega(m, post, st, ShadowPrice(0.25)) == pytest.approx(0.5 * math.log(2) - 0.25)
    assert reward_omega(m, post, st, 0.25) == reward_omega(m, post, st, ShadowPrice(0.25))
    for bad in (0.0, -1.0, math.nan, math.inf):
        with pytest.raises(ValueError):
            ShadowPrice(bad)
    assert LOG2E == pytest.approx(1 / math.log(2))
