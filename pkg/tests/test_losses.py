import numpy as np
import pytest

from gatrans import tensor as T
from gatrans.losses import (ConfusionMatrix, adversarial_value, cross_entropy,
                            dice_loss, discriminator_objective, f1_score,
                            generator_objective, mean_f1, metrics_csv,
                            mse_loss, one_hot, overall_accuracy)
from gatrans.models import Discriminator, DiscriminatorConfig, GTNet, GtnetConfig
from gatrans.tensor import Tensor, grad_check


# -- cross entropy ------------------------------------------------------------

def test_cross_entropy_uniform_logits_is_log_k():
    k = 7
    logits = Tensor(np.zeros((k, 4, 4)))
    labels = np.random.default_rng(0).integers(0, k, (4, 4))
    assert abs(cross_entropy(logits, labels).item() - np.log(k)) < 1e-12


def test_cross_entropy_saturates_with_large_margin():
    labels = np.array([[0, 1], [2, 0]])
    logits = np.full((3, 2, 2), -10.0)
    for y in range(2):
        for x in range(2):
            logits[labels[y, x], y, x] = 10.0            # margin 20
    assert cross_entropy(Tensor(logits), labels).item() < 1e-8


def test_cross_entropy_matches_pixel_loop_oracle():
    rng = np.random.default_rng(1)
    logits = rng.standard_normal((3, 2, 2))
    labels = rng.integers(0, 3, (2, 2))
    total = 0.0
    for y in range(2):
        for x in range(2):
            z = logits[:, y, x]
            total += -np.log(np.exp(z[labels[y, x]]) / np.exp(z).sum())
    assert abs(cross_entropy(Tensor(logits), labels).item() - total / 4) < 1e-10


def test_cross_entropy_rejects_out_of_range_label():
    with pytest.raises(ValueError, match=r"\(1,0\)"):
        cross_entropy(Tensor(np.zeros((3, 2, 2))), np.array([[0, 1], [3, 2]]))


def test_cross_entropy_gradient():
    rng = np.random.default_rng(2)
    labels = rng.integers(0, 4, (3, 3))
    assert grad_check(lambda t: cross_entropy(t, labels),
                      rng.standard_normal((4, 3, 3))) < 1e-4


# -- mse ----------------------------------------------------------------------

def test_mse_perfect_prediction_is_zero():
    oh = one_hot(np.array([[0, 1], [1, 0]]), 2, dtype=np.float64)
    assert mse_loss(Tensor(oh), oh).item() == 0.0


def test_mse_inverted_binary_map_is_one():
    oh = one_hot(np.array([[0, 1], [1, 0]]), 2, dtype=np.float64)
    assert mse_loss(Tensor(1.0 - oh), oh).item() == 1.0


def test_mse_matches_loop_oracle():
    rng = np.random.default_rng(3)
    a, b = rng.random((2, 3, 3)), rng.random((2, 3, 3))
    expect = sum((a[i, y, x] - b[i, y, x]) ** 2
                 for i in range(2) for y in range(3) for x in range(3)) / 18
    assert abs(mse_loss(Tensor(a), b).item() - expect) < 1e-7


def test_mse_rejects_shape_mismatch():
    with pytest.raises(T.ShapeError):
        mse_loss(Tensor(np.zeros((2, 3, 3))), np.zeros((2, 4, 4)))


# -- dice ---------------------------------------------------------------------

def test_dice_perfect_overlap_near_zero():
    labels = np.random.default_rng(4).integers(0, 3, (32, 32))
    oh = one_hot(labels, 3, dtype=np.float64)
    assert 0.0 <= dice_loss(Tensor(oh), oh).item() < 1e-3


def test_dice_disjoint_masks_near_one():
    # single foreground class, prediction and truth on opposite halves
    pred = np.zeros((1, 16, 16))
    truth = np.zeros((1, 16, 16))
    pred[0, :, :8] = 1.0
    truth[0, :, 8:] = 1.0
    assert dice_loss(Tensor(pred), truth).item() > 1.0 - 1e-2


def test_dice_half_overlap_is_one_third():
    # predicted rectangle covers exactly half of the true one:
    # Dice = 2(a/2) / (a + a/2) = 2/3, so loss = 1/3 up to smoothing
    pred = np.zeros((1, 8, 32))
    truth = np.zeros((1, 8, 32))
    truth[0, :, :16] = 1.0
    pred[0, :, :8] = 1.0
    inter, a = 8 * 8, 16 * 8
    expect = 1.0 - (2 * inter + 1.0) / (a + a // 2 + 1.0)
    got = dice_loss(Tensor(pred), truth).item()
    assert abs(got - expect) < 1e-12
    assert abs(got - 1 / 3) < 0.01


def test_dice_rejects_negative_probabilities():
    with pytest.raises(ValueError, match="nonneg"):
        dice_loss(Tensor(np.full((1, 2, 2), -0.1)), np.zeros((1, 2, 2)))


def test_dice_gradient():
    rng = np.random.default_rng(5)
    oh = one_hot(rng.integers(0, 3, (4, 4)), 3, dtype=np.float64)
    x = rng.random((3, 4, 4)) + 0.1
    assert grad_check(lambda t: dice_loss(t, oh), x) < 1e-4


# -- adversarial --------------------------------------------------------------

def test_adversarial_value_at_half_is_minus_two_log_two():
    v = adversarial_value(np.array(0.5), np.array(0.5)).item()
    assert abs(v - (-2 * np.log(2))) < 1e-6


def test_adversarial_value_perfect_discriminator_limit():
    v = adversarial_value(np.array(1.0 - 1e-9), np.array(1e-9)).item()
    assert abs(v) < 1e-5


def test_adversarial_clamps_and_warns_on_degenerate_outputs(caplog):
    import logging
    with caplog.at_level(logging.WARNING, logger="gatrans.losses"):
        v = adversarial_value(np.array(1.0), np.array(0.0)).item()
    assert np.isfinite(v)
    assert any("clamp" in r.message for r in caplog.records)


def test_generator_objective_equals_weighted_component_sum():
    rng = np.random.default_rng(6)
    k = 4
    logits = Tensor(rng.standard_normal((k, 8, 8)), requires_grad=True)
    labels = rng.integers(0, k, (8, 8))
    probs = T.softmax(logits.transpose(1, 2, 0)).transpose(2, 0, 1)
    oh = one_hot(labels, k, dtype=np.float64)
    d_fake = Tensor(np.array(0.37))
    total = generator_objective(logits, labels, probs, oh, d_fake=d_fake,
                                mu=0.5, alpha=0.5).item()
    parts = (cross_entropy(logits, labels).item()
             + 0.5 * mse_loss(probs, oh).item()
             + 0.5 * dice_loss(probs, oh).item()
             - np.log(0.37))
    assert abs(total - parts) < 1e-6


def test_perfect_prediction_against_half_discriminator():
    # exact prediction, D at 0.5: structural terms vanish (up to the Dice
    # smoothing bias) and the two-sided value sits at its -2 log 2 saddle
    labels = np.random.default_rng(7).integers(0, 3, (32, 32))
    oh = one_hot(labels, 3, dtype=np.float64)
    assert mse_loss(Tensor(oh), oh).item() == 0.0
    assert dice_loss(Tensor(oh), oh).item() < 1e-3
    assert abs(adversarial_value(np.array(0.5), np.array(0.5)).item()
               + 2 * np.log(2)) < 1e-6


def test_discriminator_objective_descends_toward_confident_d():
    worse = discriminator_objective(np.array(0.5), np.array(0.5)).item()
    better = discriminator_objective(np.array(0.9), np.array(0.1)).item()
    assert better < worse


def test_role_separation_zero_cross_gradients():
    rng = np.random.default_rng(8)
    G = GTNet(GtnetConfig(), seed=0)
    D = Discriminator(DiscriminatorConfig(), seed=1)
    img = Tensor(rng.random((3, 32, 32)).astype(np.float32))
    labels = rng.integers(0, 5, (32, 32))

    # generator objective: no gradient may reach D
    for p in D.parameters():
        p.requires_grad = False
    logits = G(img)
    probs = T.softmax(logits.transpose(1, 2, 0)).transpose(2, 0, 1)
    oh = one_hot(labels, 5)
    loss_g = generator_objective(logits, labels, probs, oh,
                                 d_fake=D(probs, img))
    loss_g.backward()
    assert all(p.grad is None for p in D.parameters())
    assert any(p.grad is not None and np.abs(p.grad).max() > 0
               for p in G.parameters())
    for p in D.parameters():
        p.requires_grad = True
        p.grad = None
    for p in G.parameters():
        p.grad = None

    # discriminator objective on detached fakes: no gradient may reach G
    with T.no_grad():
        fake = T.softmax(G(img).transpose(1, 2, 0)).transpose(2, 0, 1)
    loss_d = discriminator_objective(D(Tensor(one_hot(labels, 5)), img).reshape(1),
                                     D(Tensor(fake.data), img).reshape(1))
    loss_d.backward()
    assert all(p.grad is None for p in G.parameters())
    assert any(p.grad is not None and np.abs(p.grad).max() > 0
               for p in D.parameters())


# -- metrics ------------------------------------------------------------------

def test_f1_substitution_case():
    # TP=3, FP=1, FN=1 for class 0
    cm = ConfusionMatrix(2, counts=[[3, 1], [1, 5]])
    assert f1_score(cm, 0) == 2 * 3 / (2 * 3 + 1 + 1) == 0.75


def test_metrics_match_counting_oracle():
    rng = np.random.default_rng(9)
    for trial in range(100):
        counts = rng.integers(0, 50, (5, 5))
        if counts.sum() == 0:
            counts[0, 0] = 1
        cm = ConfusionMatrix(5, counts=counts)
        for k in range(5):
            tp = counts[k, k]
            fp = counts[:, k].sum() - tp
            fn = counts[k, :].sum() - tp
            expect = 0.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)
            assert f1_score(cm, k) == expect
        assert overall_accuracy(cm) == np.trace(counts) / counts.sum()


def test_update_matches_pairwise_loop():
    rng = np.random.default_rng(10)
    pred = rng.integers(0, 4, (13, 17))
    truth = rng.integers(0, 4, (13, 17))
    cm = ConfusionMatrix(4).update(pred, truth)
    for t in range(4):
        for p in range(4):
            assert cm.counts[t, p] == int(((truth == t) & (pred == p)).sum())


def test_confusion_merge_is_associative_sum():
    a = ConfusionMatrix(3, counts=np.arange(9).reshape(3, 3))
    b = ConfusionMatrix(3, counts=np.ones((3, 3), dtype=int))
    assert np.array_equal((a + b).counts, a.counts + b.counts)
    with pytest.raises(ValueError):
        a + ConfusionMatrix(2)


def test_class_permutation_equivariance():
    rng = np.random.default_rng(11)
    counts = rng.integers(1, 30, (5, 5))
    cm = ConfusionMatrix(5, counts=counts)
    perm = rng.permutation(5)
    cm_p = ConfusionMatrix(5, counts=counts[np.ix_(perm, perm)])
    for k in range(5):
        assert f1_score(cm_p, k) == f1_score(cm, perm[k])
    assert overall_accuracy(cm_p) == overall_accuracy(cm)
    assert mean_f1(cm_p) == mean_f1(cm)


def test_zero_support_class_scores_zero():
    cm = ConfusionMatrix(3, counts=[[4, 0, 0], [0, 5, 0], [0, 0, 0]])
    assert f1_score(cm, 2) == 0.0


def test_empty_matrix_rejected():
    with pytest.raises(ValueError, match="empty"):
        overall_accuracy(ConfusionMatrix(3))


def test_metrics_csv_layout():
    cm = ConfusionMatrix(2, counts=[[3, 1], [1, 5]])
    text = metrics_csv(cm, class_names=["bg", "fg"])
    lines = text.strip().splitlines()
    assert lines[0] == "class,f1,pixels"
    assert lines[1].startswith("bg,0.750000,4")
    assert lines[-1].startswith("overall_accuracy,0.800000,10")
