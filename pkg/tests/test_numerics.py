import math

import numpy as np
import pytest

from gckd.errors import NumericDomainError, ParameterError, ShapeError
from gckd.numerics import (
    cosine_sim,
    entropy_rows,
    l2_normalize,
    log_softmax_rows,
    normalize_rows,
    normalize_rows_backward,
    softmax_temp,
)


def test_cosine_sim_basic_cases():
    assert cosine_sim([1.0, 0.0], [3.0, 0.0]) == pytest.approx(1.0)
    assert cosine_sim([1.0, 0.0], [0.0, 2.0]) == pytest.approx(0.0)
    assert cosine_sim([1.0, 1.0], [-1.0, -1.0]) == pytest.approx(-1.0)


def test_cosine_sim_errors():
    with pytest.raises(NumericDomainError):
        cosine_sim([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(ShapeError):
        cosine_sim([1.0, 0.0], [1.0, 0.0, 0.0])
    with pytest.raises(ParameterError):
        cosine_sim([np.nan, 1.0], [1.0, 0.0])


def test_l2_normalize():
    out = l2_normalize([3.0, 4.0])
    np.testing.assert_allclose(out, [0.6, 0.8])
    with pytest.raises(NumericDomainError):
        l2_normalize([0.0, 0.0, 0.0])


def test_softmax_temp_sums_to_one_and_is_stable():
    p = softmax_temp([1000.0, 1000.0, 999.0], 0.07)
    assert np.all(np.isfinite(p))
    assert p.sum() == pytest.approx(1.0)
    assert p[0] == pytest.approx(p[1])
    with pytest.raises(ParameterError):
        softmax_temp([1.0, 2.0], 0.0)


@pytest.mark.parametrize("n", [1, 2, 7])
def test_uniform_entropy_is_log_n(n):
    p = np.full((3, n), 1.0 / n)
    np.testing.assert_allclose(entropy_rows(p), math.log(n), atol=1e-12)


def test_log_softmax_rows_matches_direct_formula(rng):
    logits = rng.standard_normal((4, 5))
    direct = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    np.testing.assert_allclose(log_softmax_rows(logits), direct, atol=1e-12)


def test_normalize_rows_backward_matches_finite_differences(rng):
    x = rng.standard_normal((3, 4))
    w = rng.standard_normal((3, 4))
    y = normalize_rows(x)
    analytic = normalize_rows_backward(y, np.linalg.norm(x, axis=1, keepdims=True), w)
    h = 1e-6
    numeric = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        numeric[idx] = (np.sum(w * normalize_rows(xp)) - np.sum(w * normalize_rows(xm))) / (2 * h)
    np.testing.assert_allclose(analytic, numeric, atol=1e-8)
