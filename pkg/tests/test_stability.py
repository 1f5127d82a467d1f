import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from alstop.stability import (
    ConfigurationError,
    Decision,
    KlPair,
    MartingaleParams,
    StoppingError,
    StoppingState,
    error_bound_width,
    error_ratios,
    first_stop_step,
    lambert_w0,
    lambert_w0_array,
    martingale_threshold,
    stability_radius,
    stability_radius_array,
    stability_radius_general,
    step_stopping,
)

from oracles import discrete_kl, radius_general_oracle, radius_oracle, w0_bisect

E = math.e


# lambert_w0

def test_w0_at_zero():
    assert lambert_w0(0.0) == 0.0


def test_w0_branch_point():
    assert lambert_w0(-1.0 / E) == pytest.approx(-1.0, abs=1e-7)


def test_w0_at_e():
    assert lambert_w0(E) == pytest.approx(1.0, rel=1e-15)


def test_w0_omega_constant():
    # frozen from the 50-digit bisection oracle
    assert float(w0_bisect(1)) == pytest.approx(0.5671432904097838, abs=1e-15)
    assert lambert_w0(1.0) == pytest.approx(0.5671432904097838, abs=1e-14)


def test_w0_clamps_just_below_branch():
    assert lambert_w0(-1.0 / E - 5e-13) == -1.0


def test_w0_rejects_below_domain():
    with pytest.raises(ValueError):
        lambert_w0(-1.0 / E - 1e-9)


@pytest.mark.parametrize("x", [math.nan, math.inf, -math.inf])
def test_w0_rejects_nonfinite(x):
    with pytest.raises(ValueError):
        lambert_w0(x)


@pytest.mark.parametrize("x", [-0.367, -0.3, -0.1, 1e-8, 0.5, 2.0, 10.0, 1e3, 1e6, 1e12])
def test_w0_matches_bisection(x):
    assert lambert_w0(x) == pytest.approx(float(w0_bisect(x)), rel=1e-14, abs=1e-15)


@settings(max_examples=300, deadline=None)
@given(st.floats(min_value=-1.0 / E, max_value=1e6))
def test_w0_residual_property(x):
    w = lambert_w0(x)
    assert w >= -1.0
    assert abs(w * math.exp(w) - x) <= 1e-12 * max(1.0, abs(x))


def test_w0_array_matches_scalar():
    xs = np.concatenate([np.linspace(-1 / E, 3, 50), np.geomspace(3, 1e6, 50)])
    ws = lambert_w0_array(xs)
    assert np.array_equal(ws, [lambert_w0(x) for x in xs])


# stability_radius

def test_radius_at_zero_is_exact():
    assert stability_radius(0.0) == 0.0


def test_radius_at_one():
    assert stability_radius(1.0) == pytest.approx(E - 1.0, abs=1e-12)


def test_radius_at_four_against_oracle():
    assert stability_radius(4.0) == pytest.approx(radius_oracle(4), rel=1e-10)


@pytest.mark.parametrize("kl", [1e-300, 1e-20, 1e-9, 1e-4, 0.05, 0.5, 2.0, 10.0, 100.0, 1e5])
def test_radius_against_oracle(kl):
    assert stability_radius(kl) == pytest.approx(radius_oracle(kl), rel=1e-13)


def test_radius_roundoff_clamp():
    assert stability_radius(-5e-11) == 0.0
    with pytest.raises(ValueError):
        stability_radius(-1e-9)


@pytest.mark.parametrize("kl", [math.nan, math.inf])
def test_radius_rejects_nonfinite(kl):
    with pytest.raises(ValueError):
        stability_radius(kl)


def test_radius_strictly_increasing_on_grid():
    r = stability_radius_array(np.linspace(0.0, 100.0, 1000))
    assert np.all(np.diff(r) > 0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 1e4), st.floats(0.0, 1e4))
def test_radius_monotone_property(a, b):
    lo, hi = sorted((a, b))
    assert stability_radius(lo) <= stability_radius(hi)


def test_radius_small_kl_asymptotics():
    # r ~ sqrt(2 KL) as KL -> 0
    for kl in (1e-12, 1e-16, 1e-30):
        assert stability_radius(kl) == pytest.approx(math.sqrt(2 * kl), rel=1e-5)


# stability_radius_general

def test_general_zero():
    assert stability_radius_general(0.0, 1.0, 1.0) == 0.0


def test_general_reduces_when_v_is_range_squared():
    assert stability_radius_general(2.0, 1.0, 1.0) == stability_radius(2.0)
    assert stability_radius_general(2.0, 9.0, 3.0) == pytest.approx(3 * stability_radius(2.0), rel=1e-15)


def test_general_against_oracle():
    assert stability_radius_general(2.0, 0.25, 1.0) == pytest.approx(
        radius_general_oracle(2, 0.25, 1), rel=1e-12
    )


@pytest.mark.parametrize("v,rng", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0), (1.0, -2.0)])
def test_general_rejects_nonpositive(v, rng):
    with pytest.raises(ValueError):
        stability_radius_general(1.0, v, rng)


# error_bound_width / KlPair

def test_width_examples():
    assert error_bound_width(KlPair(0.0, 0.0)) == 0.0
    assert error_bound_width(KlPair(1.0, 1.0)) == pytest.approx(2 * (E - 1), abs=1e-12)
    assert error_bound_width(KlPair(0.5, 2.0)) == pytest.approx(
        radius_oracle(0.5) + radius_oracle(2.0), rel=1e-13
    )


def test_klpair_validation():
    assert KlPair(-1e-11, 0.0).forward == 0.0
    with pytest.raises(ValueError):
        KlPair(-0.1, 0.0)
    with pytest.raises(ValueError):
        KlPair(0.0, math.inf)


# step_stopping

def _feed(state, radii):
    """Drive the controller with KLs whose radii are the given values."""
    out = []
    for r in radii:
        kl = _kl_for_radius(r)
        state, decision, lam = step_stopping(state, KlPair(kl, 0.0))
        out.append((decision, lam))
        if decision is Decision.STOP:
            break
    return state, out


def _kl_for_radius(r):
    # inverse of the radius: KL = e^s (s - 1) + 1 with s = log1p(r)
    if r == 0:
        return 0.0
    s = math.log1p(r)
    return math.exp(s) * (s - 1) + 1


def test_step_zero_normaliser_raises():
    state = StoppingState(0.5, m=1, min_steps=1)
    with pytest.raises(ConfigurationError):
        step_stopping(state, KlPair(0.0, 0.0))


def test_step_hand_trace():
    state = StoppingState(0.6, m=2, min_steps=1)
    state, out = _feed(state, [4.0, 2.0, 1.0])
    assert [d for d, _ in out] == [Decision.CONTINUE, Decision.CONTINUE, Decision.STOP]
    assert out[0][1] is None
    assert out[1][1] == pytest.approx(1.0)
    assert out[2][1] == pytest.approx(0.5, rel=1e-12)
    assert state.gamma_tilde == pytest.approx(2.0, rel=1e-12)
    assert state.stopped and state.t == 3


def test_step_zero_threshold_never_stops():
    state = StoppingState(0.0, m=2, min_steps=1)
    for r in np.geomspace(1.0, 1e-6, 40):
        state, decision, _ = step_stopping(state, KlPair(_kl_for_radius(r), 0.0))
        assert decision is Decision.CONTINUE


def test_step_on_stopped_state_raises():
    state = StoppingState(1.0, m=1, min_steps=1)
    state, decision, lam = step_stopping(state, KlPair(0.3, 0.2))
    assert decision is Decision.STOP and lam == 1.0
    with pytest.raises(StoppingError):
        step_stopping(state, KlPair(0.3, 0.2))


def test_step_respects_min_steps():
    state = StoppingState(1.0, m=2, min_steps=5)
    state, out = _feed(state, [1.0] * 10)
    assert len(out) == 5


def test_step_backfills_lambdas():
    state = StoppingState(0.01, m=3, min_steps=3)
    state, _ = _feed(state, [3.0, 1.0, 2.0, 0.5])
    assert len(state.lambda_history) == 4
    assert state.lambda_history[1] == 1.0


@pytest.mark.parametrize("bad", [dict(threshold=-0.1), dict(threshold=1.5), dict(m=0), dict(min_steps=0)])
def test_state_validation(bad):
    kw = dict(threshold=0.5, m=2, min_steps=2)
    kw.update(bad)
    with pytest.raises(ValueError):
        StoppingState(**kw)


radii_seq = st.lists(st.floats(1e-6, 10.0), min_size=1, max_size=60)


@settings(max_examples=150, deadline=None)
@given(radii_seq, st.integers(1, 10), st.floats(0.0, 1.0), st.integers(1, 12))
def test_state_invariants(radii, m, thr, min_steps):
    state = StoppingState(thr, m=m, min_steps=min_steps)
    for r in radii:
        state, decision, lam = step_stopping(state, KlPair(_kl_for_radius(r), 0.0))
        if state.gamma_tilde is not None:
            assert state.gamma_tilde == min(state.radius_history[:m])
            assert all(
                l == rr / state.gamma_tilde
                for l, rr in zip(state.lambda_history, state.radius_history)
            )
            assert min(state.lambda_history[:m]) == 1.0
        if state.stopped:
            assert state.t >= min_steps and state.last_lambda <= thr
            break


@settings(max_examples=150, deadline=None)
@given(radii_seq, st.integers(1, 10), st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.integers(1, 12))
def test_threshold_monotone_replay(radii, m, a, b, min_steps):
    lams = error_ratios(radii, m)
    lo, hi = sorted((a, b))
    s_lo = first_stop_step(lams, lo, m, min_steps)
    s_hi = first_stop_step(lams, hi, m, min_steps)
    inf = math.inf
    assert (inf if s_lo is None else s_lo) >= (inf if s_hi is None else s_hi)


def test_replay_agrees_with_controller():
    rng = np.random.default_rng(3)
    radii = list(rng.uniform(0.01, 2.0, size=40))
    state = StoppingState(0.2, m=5, min_steps=8)
    stop = None
    for t, r in enumerate(radii, start=1):
        state, d, _ = step_stopping(state, KlPair(_kl_for_radius(r), 0.0))
        if d is Decision.STOP:
            stop = t
            break
    replay_radii = [error_bound_width(KlPair(_kl_for_radius(r), 0.0)) for r in radii]
    assert first_stop_step(error_ratios(replay_radii, 5), 0.2, 5, 8) == stop


def test_error_ratios_short_sequence():
    assert error_ratios([1.0, 2.0], 3) == [None, None]


# martingale threshold

def test_martingale_examples():
    assert martingale_threshold(MartingaleParams(0.05, 2 * math.exp(-2))) == pytest.approx(0.05, abs=1e-15)
    assert martingale_threshold(MartingaleParams(0.1, 2 * math.exp(-8))) == pytest.approx(0.05, abs=1e-15)
    import mpmath

    expected = float(mpmath.mpf("0.1") * mpmath.sqrt(-2 / mpmath.log(mpmath.mpf("0.025"))))
    assert martingale_threshold(MartingaleParams(0.1, 0.05)) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("eta,delta", [(0.0, 0.5), (1.0, 0.5), (0.5, 0.0), (0.5, 1.0), (math.nan, 0.5)])
def test_martingale_params_open_intervals(eta, delta):
    with pytest.raises(ValueError):
        MartingaleParams(eta, delta)


# bound itself on discrete distributions

def _random_instance(rng):
    k = int(rng.integers(1, 9))
    p = rng.dirichlet(np.full(k, rng.uniform(0.2, 3.0)))
    q = rng.dirichlet(np.full(k, rng.uniform(0.2, 3.0)))
    p = np.maximum(p, 1e-300)
    q = np.maximum(q, 1e-300)
    p, q = p / p.sum(), q / q.sum()
    L = rng.uniform(0.0, 1.0, size=k)
    return p, q, L


def test_discrete_bound_holds():
    rng = np.random.default_rng(20)
    for _ in range(300):
        p, q, L = _random_instance(rng)
        gap = float(p @ L - q @ L)
        assert -stability_radius(discrete_kl(q, p)) - 1e-9 <= gap <= stability_radius(discrete_kl(p, q)) + 1e-9


def test_generalised_bound_never_looser():
    rng = np.random.default_rng(21)
    for _ in range(300):
        p, q, L = _random_instance(rng)
        v = max(float(p @ L**2), float(q @ L**2))
        if v <= 0:
            continue
        for kl in (discrete_kl(p, q), discrete_kl(q, p)):
            assert stability_radius_general(kl, v, 1.0) <= stability_radius(kl) * (1 + 1e-12)
