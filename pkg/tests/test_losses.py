import math

import numpy as np
import pytest

from gckd.errors import ConfigError, UsageError
from gckd.losses.contrastive import cd_itc, in_batch_contrastive
from gckd.losses.matching import (
    MatchingHead,
    cd_itm,
    mine_hard_negatives,
    select_positives,
    sweep_delta,
)
from gckd.losses.report import LossConfig, LossReport, total
from gckd.model.distillation import PseudoTargets, pseudo_targets
from gckd.model.encoder import FeatureBatch
from gckd.numerics import entropy_rows

from conftest import unit_rows


def _student(rows, modality="image"):
    role = "f_TI" if modality == "image" else "f_TT"
    return FeatureBatch(rows, "target", modality, "student", role)


def _teacher(rows, modality="image"):
    role = "f_hat_TI" if modality == "image" else "f_hat_TT"
    return FeatureBatch(rows, "target", modality, "teacher", role)


def test_singleton_queue_gives_zero(rng):
    img, txt = unit_rows(rng, 3, 4), unit_rows(rng, 3, 4)
    q_tt, q_ti = unit_rows(rng, 1, 4), unit_rows(rng, 1, 4)
    targets = pseudo_targets(_teacher(img), _teacher(txt, "text"), q_tt, q_ti, 0.07)
    result = cd_itc(_student(img), _student(txt, "text"), targets, q_tt, q_ti, LossConfig())
    assert result.value == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("n", [2, 5, 16])
def test_uniform_case_gives_log_n(rng, n):
    img, txt = unit_rows(rng, 3, 4), unit_rows(rng, 2, 4)
    q_tt = np.tile(unit_rows(rng, 1, 4), (n, 1))
    q_ti = np.tile(unit_rows(rng, 1, 4), (n, 1))
    targets = pseudo_targets(_teacher(img), _teacher(txt, "text"), q_tt, q_ti, 0.07)
    result = cd_itc(_student(img), _student(txt, "text"), targets, q_tt, q_ti, LossConfig())
    assert result.value == pytest.approx(math.log(n), abs=1e-9)
    assert result.directions == ["i2t", "t2i"]


def test_cd_itc_bounded_below_by_target_entropy(rng):
    for _ in range(100):
        d = int(rng.integers(2, 6))
        img, txt = unit_rows(rng, 4, d), unit_rows(rng, 4, d)
        q_tt, q_ti = unit_rows(rng, 7, d), unit_rows(rng, 5, d)
        targets = pseudo_targets(_teacher(unit_rows(rng, 4, d)), _teacher(unit_rows(rng, 4, d), "text"),
                                 q_tt, q_ti, 0.1)
        value = cd_itc(_student(img), _student(txt, "text"), targets, q_tt, q_ti, LossConfig(tau=0.1)).value
        bound = 0.5 * (entropy_rows(targets.s_i2t).mean() + entropy_rows(targets.s_t2i).mean())
        assert value >= bound - 1e-12


def test_cd_itc_equals_target_entropy_when_student_matches_teacher(rng):
    img, txt = unit_rows(rng, 4, 5), unit_rows(rng, 3, 5)
    q_tt, q_ti = unit_rows(rng, 6, 5), unit_rows(rng, 8, 5)
    targets = pseudo_targets(_teacher(img), _teacher(txt, "text"), q_tt, q_ti, 0.2)
    result = cd_itc(_student(img), _student(txt, "text"), targets, q_tt, q_ti, LossConfig(tau=0.2))
    expected = 0.5 * (entropy_rows(targets.s_i2t).mean() + entropy_rows(targets.s_t2i).mean())
    assert result.value == pytest.approx(expected, abs=1e-12)
    np.testing.assert_allclose(result.grad_img, 0.0, atol=1e-12)


def test_cd_itc_skips_a_missing_direction(rng):
    img, txt = unit_rows(rng, 3, 4), unit_rows(rng, 3, 4)
    q_tt = unit_rows(rng, 4, 4)
    targets = pseudo_targets(_teacher(img), _teacher(txt, "text"), q_tt, None, 0.07)
    result = cd_itc(_student(img), _student(txt, "text"), targets, q_tt, None, LossConfig())
    assert result.skipped == ["cd_itc_t2i"]
    assert np.all(result.grad_txt == 0)
    empty = cd_itc(_student(img), _student(txt, "text"), PseudoTargets(None, None, 0.07), None, None, LossConfig())
    assert empty.value is None and empty.skipped == ["cd_itc_i2t", "cd_itc_t2i"]


def test_cd_itc_rejects_misaligned_targets(rng):
    img, txt = unit_rows(rng, 3, 4), unit_rows(rng, 3, 4)
    q = unit_rows(rng, 4, 4)
    targets = PseudoTargets(np.full((3, 5), 0.2), None, 0.07)
    with pytest.raises(UsageError):
        cd_itc(_student(img), _student(txt, "text"), targets, q, None, LossConfig())


def test_cd_itc_gradient_matches_finite_differences(rng):
    img, txt = unit_rows(rng, 3, 4), unit_rows(rng, 3, 4)
    q_tt, q_ti = unit_rows(rng, 6, 4), unit_rows(rng, 6, 4)
    targets = pseudo_targets(_teacher(unit_rows(rng, 3, 4)), _teacher(unit_rows(rng, 3, 4), "text"), q_tt, q_ti, 0.5)
    cfg = LossConfig(tau=0.5)
    result = cd_itc(_student(img), _student(txt, "text"), targets, q_tt, q_ti, cfg)
    h = 1e-6

    def value(i, t):
        # Perturbed rows are no longer unit norm, so use the formula directly
        return 0.5 * (_soft_ce(i, q_tt, targets.s_i2t, 0.5) + _soft_ce(t, q_ti, targets.s_t2i, 0.5))

    for idx in [(0, 0), (1, 2), (2, 3)]:
        plus, minus = img.copy(), img.copy()
        plus[idx] += h
        minus[idx] -= h
        assert result.grad_img[idx] == pytest.approx((value(plus, txt) - value(minus, txt)) / (2 * h), abs=1e-7)
        plus, minus = txt.copy(), txt.copy()
        plus[idx] += h
        minus[idx] -= h
        assert result.grad_txt[idx] == pytest.approx((value(img, plus) - value(img, minus)) / (2 * h), abs=1e-7)


def _soft_ce(feats, queue, targets, tau):
    logits = feats @ queue.T / tau
    log_p = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    return float(-np.sum(targets * log_p) / feats.shape[0])


def test_equal_logits_give_log_two_per_pair(rng):
    d, hidden = 4, 3
    head = MatchingHead(rng.standard_normal((2 * d, hidden)), np.zeros(hidden), np.zeros((hidden, 2)), np.zeros(2))
    img, queue_txt, source_txt = unit_rows(rng, 3, d), unit_rows(rng, 5, d), unit_rows(rng, 2, d)
    positives = np.array([[0, 1], [1, 4], [2, 0]])
    negatives = np.array([[0, 1], [2, 0]])
    result = cd_itm(positives, negatives, head, img, queue_txt, source_txt)
    assert result.value == pytest.approx(math.log(2), abs=1e-12)
    assert (result.n_positive, result.n_negative, result.n_skipped) == (3, 2, 0)


@pytest.mark.parametrize("seed", range(5))
def test_cd_itm_matches_direct_recomputation(seed):
    rng = np.random.default_rng(seed)
    d, hidden = 3, 4
    head = MatchingHead(rng.standard_normal((2 * d, hidden)), rng.standard_normal(hidden),
                        rng.standard_normal((hidden, 2)), rng.standard_normal(2))
    img, queue_txt, source_txt = unit_rows(rng, 2, d), unit_rows(rng, 4, d), unit_rows(rng, 3, d)
    positives = np.array([[0, int(rng.integers(4))], [1, int(rng.integers(4))]])
    negatives = np.array([[0, int(rng.integers(3))], [1, int(rng.integers(3))]])
    pairs = [(img[i], queue_txt[j], 1) for i, j in positives] + [(img[i], source_txt[j], 0) for i, j in negatives]
    losses = []
    for v, t, label in pairs:
        logits = np.tanh(np.concatenate([v, t]) @ head.w0 + head.b0) @ head.w1 + head.b1
        losses.append(math.log(math.exp(logits[0]) + math.exp(logits[1])) - logits[label])
    result = cd_itm(positives, negatives, head, img, queue_txt, source_txt)
    assert result.value == pytest.approx(sum(losses) / 4, abs=1e-12)


def test_cd_itm_without_pairs_is_skipped(rng):
    head = MatchingHead(np.zeros((4, 2)), np.zeros(2), np.zeros((2, 2)), np.zeros(2))
    empty = np.zeros((0, 2), dtype=np.int64)
    result = cd_itm(empty, empty, head, unit_rows(rng, 3, 2), None, unit_rows(rng, 1, 2))
    assert result.value is None and result.n_skipped == 3


def test_select_positives_threshold():
    teacher_img = np.array([[1.0, 0.0], [0.0, 1.0]])
    q_tt = np.array([[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]])
    pairs = select_positives(teacher_img, q_tt, 0.7)
    np.testing.assert_array_equal(pairs, [[0, 0], [1, 1], [1, 2]])
    assert select_positives(teacher_img, None, 0.7).shape == (0, 2)


def test_hard_negative_is_most_similar_with_low_index_ties():
    img = np.array([[1.0, 0.0], [0.0, 1.0]])
    src = np.array([[0.0, 1.0], [1.0, 0.0], [1.0, 0.0]])
    np.testing.assert_array_equal(mine_hard_negatives(img, src), [[0, 1], [1, 0]])


def test_sweep_delta_counts_do_not_increase(rng):
    sims = np.einsum("id,jd->ij", unit_rows(rng, 20, 3), unit_rows(rng, 30, 3))
    counts = sweep_delta(sims, [0.5, 0.6, 0.7, 0.8, 0.9])
    values = [counts[d] for d in sorted(counts)]
    assert values == sorted(values, reverse=True)
    assert counts[0.5] == int(np.count_nonzero(sims > 0.5))


def test_total_weights_and_skips():
    cfg = LossConfig(lambda1=0.5, lambda2=0.25, lambda3=2.0)
    report = total(1.0, None, 0.5, cfg)
    assert report.total == pytest.approx(0.5 + 1.0)
    assert report.skipped == ["cd_itm"]
    with pytest.raises(ConfigError):
        total(1.0, 1.0, 0.0, LossConfig(lambda1=-1.0))
    assert isinstance(report, LossReport)


def test_in_batch_contrastive_gradient(rng):
    img, txt = unit_rows(rng, 4, 3), unit_rows(rng, 4, 3)
    value, g_img, g_txt = in_batch_contrastive(img, txt, 0.3)
    h = 1e-6
    for idx in [(0, 1), (3, 2)]:
        plus, minus = img.copy(), img.copy()
        plus[idx] += h
        minus[idx] -= h
        numeric = (in_batch_contrastive(plus, txt, 0.3)[0] - in_batch_contrastive(minus, txt, 0.3)[0]) / (2 * h)
        assert g_img[idx] == pytest.approx(numeric, abs=1e-7)
        plus, minus = txt.copy(), txt.copy()
        plus[idx] += h
        minus[idx] -= h
        numeric = (in_batch_contrastive(img, plus, 0.3)[0] - in_batch_contrastive(img, minus, 0.3)[0]) / (2 * h)
        assert g_txt[idx] == pytest.approx(numeric, abs=1e-7)
    assert value > 0
