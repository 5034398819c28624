import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ccmaes.objectives import (ACKLEY_BOUNDS, BaseFunction, ContextualObjective, FunctionKind,
                               eval_base, eval_contextual, make_contextual, sample_context)

KINDS = list(FunctionKind)


@pytest.mark.parametrize("kind", KINDS)
def test_value_at_optimum_is_exactly_zero(kind):
    f = BaseFunction(kind, 20)
    assert eval_base(f, f.optimum) == 0.0


def test_trivial_values():
    assert eval_base(BaseFunction("sphere", 20), np.zeros(20)) == 0.0
    assert eval_base(BaseFunction("rosenbrock", 20), np.ones(20)) == 0.0
    assert eval_base(BaseFunction("ackley", 20), np.zeros(20)) == 0.0
    x = np.zeros(20)
    x[0] = 1.0
    assert eval_base(BaseFunction("discus", 20), x) == 1e6


def test_hand_computed_values():
    # d = 3: ellipsoid scales 1, 1e3, 1e6; powers 2, 4, 6
    x = np.array([1.0, 2.0, -1.0])
    assert eval_base(BaseFunction("ellipsoidal", 3), x) == pytest.approx(1 + 4e3 + 1e6)
    assert eval_base(BaseFunction("diff_powers", 3), x) == pytest.approx(np.sqrt(1 + 16 + 1))
    # 100 (1 - 2)^2 + 0 + 100 (4 + 1)^2 + 1
    assert eval_base(BaseFunction("rosenbrock", 3), x) == pytest.approx(100 + 2500 + 1)
    # cos(2 pi) = 1 so the last two terms cancel; rms of (1, 1) is 1
    ack = -20 * np.exp(-0.2) + 20
    assert eval_base(BaseFunction("ackley", 2), [1.0, 1.0]) == pytest.approx(ack)


@pytest.mark.parametrize("kind", KINDS)
def test_nonnegative_on_random_inputs(kind):
    rng = np.random.default_rng(3)
    f = BaseFunction(kind, 20)
    X = rng.normal(scale=rng.uniform(0.01, 30.0, size=(10_000, 1)), size=(10_000, 20))
    assert min(eval_base(f, x) for x in X) >= 0.0


@pytest.mark.parametrize("kind", KINDS)
@settings(max_examples=50, deadline=None)
@given(x=arrays(np.float64, 5, elements=st.floats(-50, 50)))
def test_nonnegative_property(kind, x):
    assert eval_base(BaseFunction(kind, 5), x) >= 0.0


def test_dimension_errors():
    with pytest.raises(ValueError):
        eval_base(BaseFunction("sphere", 3), np.zeros(4))
    with pytest.raises(ValueError):
        BaseFunction("rosenbrock", 1)
    obj = make_contextual(BaseFunction("sphere", 4), 1, 0)
    with pytest.raises(ValueError):
        eval_contextual(obj, [1.5, 1.5], np.zeros(4))
    with pytest.raises(ValueError):
        eval_contextual(obj, [1.5], np.zeros(3))
    with pytest.raises(ValueError):
        make_contextual(BaseFunction("sphere", 4), 0, 0)


def test_make_contextual_shapes_and_determinism():
    obj = make_contextual(BaseFunction("sphere", 20), 1, seed=7)
    assert obj.G.shape == (20, 1)
    again = make_contextual(BaseFunction("sphere", 20), 1, seed=7)
    np.testing.assert_array_equal(obj.G, again.G)
    assert make_contextual(BaseFunction("sphere", 20), 2, seed=7).G.shape == (20, 2)
    assert obj.bounds is None
    assert make_contextual(BaseFunction("ackley", 20), 1, 0).bounds == ACKLEY_BOUNDS


def test_contextual_shift_cancels():
    rng = np.random.default_rng(0)
    for _ in range(100):
        obj = make_contextual(BaseFunction("sphere", 20), 2, int(rng.integers(1 << 30)))
        s = sample_context(obj, rng)
        assert eval_contextual(obj, s, -obj.G @ s) == 0.0


def test_degenerate_context_and_hand_value():
    f = BaseFunction("rosenbrock", 3)
    obj = ContextualObjective(f, np.zeros((3, 1)), 1)
    x = np.array([0.5, -1.0, 2.0])
    assert eval_contextual(obj, [1.3], x) == -eval_base(f, x)

    obj = ContextualObjective(BaseFunction("sphere", 2), np.array([[1.0], [1.0]]), 1)
    assert eval_contextual(obj, [1.5], np.zeros(2)) == -4.5


def test_ackley_clamps_effective_input():
    obj = make_contextual(BaseFunction("ackley", 3), 1, 0)
    far = eval_contextual(obj, [1.0], np.full(3, 1e6))
    corner = -eval_base(BaseFunction("ackley", 3), np.full(3, ACKLEY_BOUNDS[1]))
    assert far == corner
    assert np.isfinite(eval_contextual(obj, [1.0], np.full(3, 1e300)))


def test_contextual_determinism():
    a = make_contextual(BaseFunction("rosenbrock", 20), 2, 11)
    b = make_contextual(BaseFunction("rosenbrock", 20), 2, 11)
    rng = np.random.default_rng(1)
    for _ in range(100):
        s, theta = rng.uniform(1, 2, 2), rng.normal(size=20)
        assert eval_contextual(a, s, theta) == eval_contextual(b, s, theta)
        assert eval_contextual(a, s, theta) <= 0.0


def test_sample_context_range_and_moments():
    obj = make_contextual(BaseFunction("sphere", 5), 1, 0)
    rng = np.random.default_rng(2)
    draws = np.array([sample_context(obj, rng) for _ in range(100_000)])
    assert draws.shape == (100_000, 1)
    assert draws.min() >= 1.0 and draws.max() < 2.0
    assert abs(draws.mean() - 1.5) < 0.01

    obj2 = make_contextual(BaseFunction("sphere", 5), 2, 0)
    pairs = np.array([sample_context(obj2, rng) for _ in range(10_000)])
    assert abs(np.corrcoef(pairs.T)[0, 1]) < 0.05
