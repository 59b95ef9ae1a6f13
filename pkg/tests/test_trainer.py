import numpy as np
import pytest

from cmpcal import InvalidArgumentError, TrainingFailureError
from cmpcal.datasets import EmbeddingDataset, SynthSpec, synth_generate
from cmpcal.losses import CmpConfig, loss_from_logits
from cmpcal.trainer import (HeadParams, TrainConfig, evaluate, evaluate_logits, forward,
                            head_gradient, init_head, lambda_line_search, lambda_table_to_csv,
                            train)
from oracles import central_difference, rel_error


@pytest.fixture(scope="module")
def blobs():
    return synth_generate(SynthSpec(2, 8, 100, 4.0, 0.5, 0.0, seed=0))[0]


def test_init_head():
    a = init_head(2, 3, seed=5)
    assert a.prototypes.shape == (3, 2) and np.all(np.isfinite(a.prototypes))
    assert np.array_equal(a.prototypes, init_head(2, 3, seed=5).prototypes)
    for s in range(100):
        assert not np.array_equal(init_head(4, 3, s).prototypes, init_head(4, 3, s + 100).prototypes)
    with pytest.raises(InvalidArgumentError):
        init_head(0, 3)


def test_forward_examples():
    head = HeadParams(np.array([[1.0, 2.0], [-2.0, 1.0]]))
    z = forward(head, np.array([[2.0, 4.0], [3.0, 0.0]]))
    assert z[0, 0] == pytest.approx(1.0) and z[0, 1] == pytest.approx(0.0, abs=1e-15)
    assert np.all(np.abs(z) <= 1 + 1e-12)
    dot = HeadParams(np.array([[1.0, 2.0], [-2.0, 1.0]]), use_cosine=False, normalize_embeddings=False)
    np.testing.assert_array_equal(forward(dot, np.zeros((1, 2))), [[0.0, 0.0]])
    with pytest.raises(InvalidArgumentError):
        forward(head, np.zeros((1, 3)))


@pytest.mark.parametrize("cosine", [True, False])
@pytest.mark.parametrize("base", ["cross_entropy", "row_contrastive"])
@pytest.mark.parametrize("variant", ["ratio", "log_ratio"])
def test_head_gradient_matches_finite_differences(cosine, base, variant):
    rng = np.random.default_rng(0)
    c = 4
    x = rng.normal(size=(c, 6))
    y = rng.permutation(c)
    head = HeadParams(rng.normal(size=(c, 6)), temperature=0.5, use_cosine=cosine,
                      normalize_embeddings=cosine)
    cfg = CmpConfig(lam=1.0, variant=variant)

    def f(w):
        h = HeadParams(w, head.temperature, head.normalize_embeddings, head.use_cosine)
        return loss_from_logits(forward(h, x), y, cfg, base, h.temperature).total

    _, g_w, g_t = head_gradient(head, x, y, cfg, base)
    assert rel_error(g_w, central_difference(f, head.prototypes)) <= 1e-5

    def f_tau(t):
        h = HeadParams(head.prototypes, float(t[0]), head.normalize_embeddings, head.use_cosine)
        return loss_from_logits(forward(h, x), y, cfg, base, h.temperature).total

    num = central_difference(f_tau, np.array([head.temperature]), h=1e-6)
    assert abs(g_t - num[0]) <= 1e-5 * max(abs(num[0]), 1e-12)


def test_train_separable_blobs(blobs):
    head, hist = train(blobs, TrainConfig(epochs=50, batch_size=20, seed=1))
    assert len(hist) == 50
    assert hist.records[-1].train_accuracy >= 0.99
    acc, _ = evaluate(head, blobs)
    assert acc >= 0.99


def test_train_deterministic(blobs):
    cfg = TrainConfig(epochs=5, batch_size=16, seed=3, cmp=CmpConfig(0.0))
    h1, r1 = train(blobs, cfg)
    h2, r2 = train(blobs, cfg)
    assert r1.records == r2.records and r1.grad_supnorms == r2.grad_supnorms
    assert np.array_equal(h1.prototypes, h2.prototypes)


def test_lambda_zero_matches_base_only_training():
    ds = synth_generate(SynthSpec(3, 6, 30, 2.0, 1.0, 0.2, seed=4))[0]
    a = train(ds, TrainConfig(epochs=5, batch_size=10, cmp=CmpConfig(0.0)))
    b = train(ds, TrainConfig(epochs=5, batch_size=10, cmp=CmpConfig(0.0, variant="log_ratio")))
    assert np.array_equal(a[0].prototypes, b[0].prototypes)
    assert all(r.cmp_loss >= 0 for r in a[1].records)


def test_cmp_zero_on_perfect_epochs(blobs):
    _, hist = train(blobs, TrainConfig(epochs=20, batch_size=20, cmp=CmpConfig(1.0)))
    perfect = [r for r in hist.records if r.train_accuracy == 1.0]
    assert perfect
    assert all(r.cmp_loss == 0.0 and r.total == r.base_loss for r in perfect)


def test_learn_temperature_clamped(blobs):
    head, _ = train(blobs, TrainConfig(epochs=3, batch_size=20, learn_temperature=True,
                                       learning_rate=5.0))
    assert 1e-2 <= head.temperature <= 1e3


def test_divergence_raises():
    # conflicting labels keep the gradient nonzero; the first step overflows
    ds = EmbeddingDataset(np.array([[10.0, 0.0], [10.0, 0.0]]), [0, 1], 2)
    cfg = TrainConfig(learning_rate=1e308, momentum=0.0, epochs=3, batch_size=2, temperature=1.0,
                      use_cosine=False, normalize_embeddings=False)
    with pytest.raises(TrainingFailureError) as exc:
        train(ds, cfg)
    assert exc.value.epoch is not None and exc.value.step is not None


def test_train_input_checks(blobs):
    with pytest.raises(InvalidArgumentError):
        train(blobs, TrainConfig(batch_size=1000))
    with pytest.raises(InvalidArgumentError):
        train(blobs, TrainConfig(batch_size=4, base="row_contrastive"))
    with pytest.raises(InvalidArgumentError):
        TrainConfig(momentum=1.0)


def test_evaluate_uniform_head():
    rng = np.random.default_rng(0)
    n = 10_000
    labels = np.repeat(np.arange(4), n // 4)
    # equal logits with an arbitrary argmax: random guess at confidence 0.25
    logits = np.zeros((n, 4)) + rng.normal(scale=1e-9, size=(n, 4))
    acc, rep = evaluate_logits(logits, labels)
    assert abs(acc - 0.25) <= 0.02 and rep.ece <= 0.02


def test_evaluate_perfect_head():
    labels = np.arange(100) % 5
    logits = 50.0 * np.eye(5)[labels]
    acc, rep = evaluate_logits(logits, labels)
    assert acc == 1.0 and rep.ece == pytest.approx(0.0, abs=1e-15)


def test_evaluate_is_pure(blobs):
    head = init_head(blobs.dim, 2, seed=0)
    assert evaluate(head, blobs) == evaluate(head, blobs)


def test_history_csv(blobs):
    _, hist = train(blobs, TrainConfig(epochs=2, batch_size=50))
    lines = hist.to_csv().splitlines()
    assert lines[0] == "epoch,base_loss,cmp_loss,total,train_accuracy,mean_entropy,mean_sharpness"
    assert len(lines) == 3


def test_line_search_rules(blobs):
    cfg = TrainConfig(epochs=3, batch_size=20)
    best, rows = lambda_line_search(blobs, blobs, [0.0], cfg)
    assert best == 0.0 and len(rows) == 1
    best, rows = lambda_line_search(blobs, blobs, [0.5, 0.0, 0.2], cfg)
    assert best == min(rows, key=lambda r: (r.ece, r.lam)).lam
    # separable data: every lambda is perfect, so the tie goes to the smallest
    good = [r for r in rows if r.ece == min(q.ece for q in rows)]
    assert best == min(r.lam for r in good)
    _, threaded = lambda_line_search(blobs, blobs, [0.5, 0.0, 0.2], cfg, workers=3)
    assert threaded == rows
    assert lambda_table_to_csv(rows).splitlines()[0] == "lambda,ece,ace,mce,accuracy"
    with pytest.raises(InvalidArgumentError):
        lambda_line_search(blobs, blobs, [], cfg)


def test_line_search_all_fail():
    ds = EmbeddingDataset(np.array([[10.0, 0.0], [10.0, 0.0]]), [0, 1], 2)
    cfg = TrainConfig(learning_rate=1e308, momentum=0.0, epochs=2, batch_size=2, temperature=1.0,
                      use_cosine=False, normalize_embeddings=False)
    with pytest.raises(TrainingFailureError):
        lambda_line_search(ds, ds, [0.0, 0.1], cfg)


def test_head_json_round_trip():
    head = init_head(3, 4, seed=9)
    back = HeadParams.from_json(head.to_json())
    assert np.array_equal(back.prototypes, head.prototypes) and back.temperature == head.temperature
