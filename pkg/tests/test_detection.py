import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import base_params
from resilient_dmpc.detection import (AdversaryPolicy, HypothesisState, bayes_update, detection_residual,
                                      detection_threshold, init_priors, inject_attack)

B = -0.00025


def test_priors():
    np.testing.assert_allclose(init_priors(0.3, 2).probs, [0.7, 0.15, 0.15])
    np.testing.assert_allclose(init_priors(1.0, 4).probs, [0.0, 0.25, 0.25, 0.25, 0.25])
    with pytest.raises(ValueError):
        init_priors(0.0, 2)
    with pytest.raises(ValueError):
        init_priors(0.3, 0)


def _residual(w_d, w_a):
    prm = base_params()
    x_prev = 0.55
    u = np.array([100.0, 500.0, 10.0, 40.0, -20.0])
    forecast = u.sum()
    realized = u[0] + w_d + w_a
    x = x_prev + B * realized
    return detection_residual(x, x_prev, u, forecast, prm, B)


def test_residual_examples():
    prm = base_params()
    assert detection_threshold(prm, B) == pytest.approx(0.0125)
    delta, hit = _residual(0.0, 0.0)
    assert delta == pytest.approx(0.0, abs=1e-15) and not hit
    delta, hit = _residual(50.0, 0.0)
    assert delta == pytest.approx(0.0125, abs=1e-15)
    # threshold itself is not an attack; rounding decides only beyond it
    assert hit == (delta > 0.0125)
    delta, hit = _residual(0.0, 150.0)
    assert delta == pytest.approx(0.0375) and hit


def test_bayes_examples():
    h = init_priors(0.3, 2)
    h1 = bayes_update(h, True, (1, 1), 0.3)
    np.testing.assert_allclose(h1.probs, [0.0, 0.5, 0.5], atol=1e-15)
    assert h1.n_attacks == 1
    h2 = bayes_update(h1, True, (0, 1), 0.3)
    np.testing.assert_allclose(h2.probs, [0.0, 0.0, 1.0], atol=1e-15)
    assert h2.identified() == 1
    h3 = bayes_update(h, False, (1, 1), 0.3)
    np.testing.assert_allclose(h3.probs, [0.7 / 0.91, 0.105 / 0.91, 0.105 / 0.91], rtol=1e-12)
    assert h3.n_attacks == 0


def test_zero_marginal_freezes_state():
    h = HypothesisState(np.array([0.0, 0.5, 0.5]), 2)
    out = bayes_update(h, True, (0, 0), 0.3)
    np.testing.assert_array_equal(out.probs, h.probs)
    assert out.anomalies == 1


def test_lock_tolerance():
    h = HypothesisState(np.array([0.0, 1.0 - 1e-12, 1e-12]))
    assert h.identified() is None
    assert h.identified(1e-9) == 0


@settings(max_examples=300, deadline=None)
@given(p_at=st.floats(0.01, 1.0), n=st.integers(1, 4),
       obs=st.lists(st.tuples(st.booleans(), st.integers(0, 15)), max_size=40))
def test_posterior_stays_a_distribution(p_at, n, obs):
    h = init_priors(p_at, n)
    zero = h.probs == 0
    for attacked, mask in obs:
        v = [(mask >> k) & 1 for k in range(n)]
        h = bayes_update(h, attacked, v, p_at)
        assert abs(h.probs.sum() - 1.0) <= 1e-12
        assert np.all(h.probs >= 0)
        assert np.all(h.probs[zero] == 0)
        zero = zero | (h.probs == 0)


def test_inject_attack_examples():
    pol = AdversaryPolicy(2, 0.3, 0.5)
    u = np.array([0.0, 800.0, 5.0, 20.0])
    quiet = inject_attack(pol, u, [1], [100.0], [1], attack=False)
    np.testing.assert_array_equal(quiet.implemented, u)
    out = inject_attack(pol, u, [1], [100.0], [1], attack=True)
    assert out.implemented[3] == pytest.approx(70.0)
    assert out.extra_draw == {1: pytest.approx(50.0)}
    # the adversary keeps its own balance by generating less
    assert out.implemented.sum() == pytest.approx(u.sum())
    clamp = inject_attack(pol, np.array([0.0, 800.0, 5.0, 80.0]), [1], [100.0], [1], attack=True)
    assert clamp.implemented[3] == pytest.approx(100.0)
    assert clamp.extra_draw[1] == pytest.approx(20.0)


def test_inject_attack_respects_targets_and_rng():
    pol = AdversaryPolicy(2, 1.0, 0.5)
    u = np.array([0.0, 800.0, 0.0, 10.0, 10.0])
    out = inject_attack(pol, u, [1, 3], [100.0, 100.0], [3], rng=np.random.default_rng(0))
    assert set(out.extra_draw) == {3}
    assert out.implemented[3] == 10.0
    never = AdversaryPolicy(2, 0.0, 0.5)
    assert not inject_attack(never, u, [1, 3], [100.0, 100.0], [1, 3], rng=np.random.default_rng(0)).attacked


def test_inject_attack_uses_storage_when_generation_is_low():
    pol = AdversaryPolicy(2, 1.0, 0.5)
    u = np.array([0.0, 10.0, 0.0, 0.0])
    out = inject_attack(pol, u, [1], [100.0], [1], attack=True, p_st_min=-300.0)
    assert out.implemented[1] == pytest.approx(0.0)
    assert out.implemented[0] == pytest.approx(-40.0)
    assert out.implemented.sum() == pytest.approx(u.sum())
