import math
import warnings

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.special import gamma as gamma_fn

from tfsh.mesh import (
    StepRestrictionError,
    StepRestrictionWarning,
    TimeMesh,
    adaptive_next_step,
    graded_mesh,
    max_step_bound,
    two_part_mesh,
    two_part_split,
    uniform_mesh,
    warmup_count,
)


def test_graded_examples():
    np.testing.assert_array_equal(graded_mesh(1.0, 4, 1.0).nodes, [0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_allclose(graded_mesh(1.0, 2, 2.0).nodes, [0, 0.25, 1.0], rtol=0, atol=1e-16)
    assert graded_mesh(0.25, 11, 4.0).nodes[1] == pytest.approx(0.25 / 11**4, rel=1e-14)


def test_graded_gamma_one_is_uniform():
    assert np.array_equal(graded_mesh(2.5, 7, 1.0).nodes, uniform_mesh(2.5, 7).nodes)


@pytest.mark.parametrize("args", [(0.0, 4, 2.0), (1.0, 0, 2.0), (1.0, 2.5, 2.0), (1.0, 4, 0.5)])
def test_graded_rejects(args):
    with pytest.raises(ValueError):
        graded_mesh(*args)


def test_mesh_validation():
    with pytest.raises(ValueError):
        TimeMesh(np.array([0.1, 0.2]))
    with pytest.raises(ValueError, match="k=2"):
        TimeMesh(np.array([0.0, 0.2, 0.2]))
    with pytest.raises(ValueError):
        TimeMesh(np.array([0.0, np.inf]))
    with pytest.raises(ValueError):
        TimeMesh(np.array([0.0]))


def test_derived_fields():
    m = TimeMesh(np.array([0.0, 0.1, 0.3, 0.4]))
    np.testing.assert_allclose(m.steps, [0.1, 0.2, 0.1])
    np.testing.assert_allclose(m.ratios, [2.0, 0.5])
    assert m.r_star == pytest.approx(0.5)
    assert m.tau_max == pytest.approx(0.2)
    assert m.N == 3 and m.T == 0.4
    rows = list(m.to_csv_rows())
    assert rows[0] == (0, 0.0, None, None)
    assert rows[2][3] == pytest.approx(2.0)


def test_two_part_example():
    T0, N0, N1 = two_part_split(1.0, 20, 4.0)
    assert (T0, N0, N1) == (0.25, 11, 9)
    with pytest.raises(ValueError):
        two_part_split(1.0, 1, 4.0)
    with pytest.raises(ValueError):
        two_part_split(0.2, 10, 4.0)  # T0 = T leaves no random part


@settings(max_examples=50, deadline=None)
@given(
    N=st.integers(4, 400),
    gamma=st.floats(1.5, 8.0),
    T=st.floats(0.5, 5.0),
    seed=st.integers(0, 2**64 - 1),
)
def test_two_part_properties(N, gamma, T, seed):
    try:
        T0, N0, _ = two_part_split(T, N, gamma)
    except ValueError:
        assume(False)
    m = two_part_mesh(T, N, gamma, seed)
    assert m.N == N
    assert m.nodes[-1] == T
    assert m.nodes[N0] == T0
    assert np.sum(m.steps[N0:]) == pytest.approx(T - T0, rel=1e-14)
    assert np.array_equal(m.nodes, two_part_mesh(T, N, gamma, seed).nodes)
    assert m.r_star <= 1.0


def test_two_part_seed_changes_random_part_only():
    a = two_part_mesh(1.0, 40, 4.0, 1)
    b = two_part_mesh(1.0, 40, 4.0, 2)
    _, N0, _ = two_part_split(1.0, 40, 4.0)
    assert np.array_equal(a.nodes[: N0 + 1], b.nodes[: N0 + 1])
    assert not np.array_equal(a.nodes, b.nodes)


def test_adaptive_examples():
    assert adaptive_next_step(5.0, 0.0, 0.1, 0.001) == 0.1
    assert adaptive_next_step(math.inf, 10.0, 0.1, 0.001) == 0.001
    assert adaptive_next_step(1.0, 1e3, 0.1, 0.001) == pytest.approx(0.1 / math.sqrt(1001), rel=1e-14)
    with pytest.raises(ValueError):
        adaptive_next_step(1.0, 1.0, 0.001, 0.1)
    with pytest.raises(ValueError):
        adaptive_next_step(-1.0, 1.0, 0.1, 0.001)


@given(
    rate=st.floats(0, 1e12),
    eta=st.floats(0, 1e6),
    lo=st.floats(1e-6, 1.0),
    span=st.floats(1.0, 1e3),
)
def test_adaptive_in_bounds(rate, eta, lo, span):
    hi = lo * span
    tau = adaptive_next_step(rate, eta, hi, lo)
    assert lo <= tau <= hi


def test_max_step_bound_values():
    assert max_step_bound(1.0, 0.0, 1.0) == pytest.approx(1.0, rel=1e-15)
    assert max_step_bound(0.5, 0.1, 0.5) == pytest.approx(4.832, abs=1e-3)
    ref = (3 / (gamma_fn(1.2) * 6.55)) ** 1.25
    assert max_step_bound(0.8, 1.0, 0.85) == pytest.approx(ref, rel=1e-14)
    for bad in [(0.0, 0.1, 0.5), (1.2, 0.1, 0.5), (0.5, -1, 0.5), (0.5, 0.1, 0.0)]:
        with pytest.raises(ValueError):
            max_step_bound(*bad)


def test_step_bound_warning_and_strict():
    m = uniform_mesh(10.0, 2)
    with pytest.warns(StepRestrictionWarning):
        assert not m.check_step_bound(1.0)
    with pytest.raises(StepRestrictionError):
        m.check_step_bound(1.0, strict=True)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert m.check_step_bound(5.0)


def test_warmup_count_last_step():
    for tau in (0.1, 0.01, 0.037):
        n0 = warmup_count(1 / 3, 3.0, tau)
        assert graded_mesh(1 / 3, n0, 3.0).steps[-1] <= tau
