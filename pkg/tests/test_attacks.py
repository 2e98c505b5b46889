import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lrlab.attacks import (AttackConfig, attack_fgsm, attack_iterative, build_adversarial_set, input_gradient,
                           linf_distance, load_adversarial_set, save_adversarial_set)
from lrlab.errors import ConfigError, DataError
from lrlab.nn import predict_logits
from lrlab.tensor import softmax_cross_entropy


@pytest.fixture(scope="module")
def batch(small_data):
    test = small_data[3]
    return test.images[:24], test.labels[:24]


def per_sample_loss(m, x, y):
    logits = predict_logits(m, x)
    return np.array([softmax_cross_entropy(logits[i:i + 1], y[i:i + 1]).item() for i in range(len(x))])


@pytest.mark.parametrize("kwargs", [
    dict(kind="cw"), dict(epsilon=1.5), dict(epsilon=-0.1), dict(iters=0), dict(kind="bim", alpha=-1.0),
])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        AttackConfig(**kwargs)


def test_config_defaults():
    c = AttackConfig("pgd", 0.03)
    assert c.alpha == pytest.approx(0.0075) and c.iters == 10 and c.random_start is True
    f = AttackConfig("fgsm", 0.1, iters=5, random_start=True)
    assert f.iters == 1 and f.random_start is False
    assert AttackConfig("bim", 0.03).random_start is False


def test_fgsm_zero_epsilon(small_model, batch):
    x, y = batch
    assert np.array_equal(attack_fgsm(small_model, x, y, 0.0), x)


def test_fgsm_clamps_at_one(small_model, batch):
    _, y = batch
    x = np.ones((len(y), 1, 28, 28), dtype=np.float32)
    g = input_gradient(small_model, x, y)
    out = attack_fgsm(small_model, x, y, 0.2)
    assert (g > 0).any() and (out[g > 0] == 1.0).all()
    assert np.allclose(out[g < 0], 0.8)


def test_fgsm_sign_zero_does_not_move(small_model, batch):
    x, y = batch
    g = input_gradient(small_model, x, y)
    out = attack_fgsm(small_model, x, y, 0.05)
    zero = g == 0
    assert np.array_equal(out[zero], x[zero])


def test_fgsm_rejects_bad_epsilon(small_model, batch):
    with pytest.raises(ConfigError):
        attack_fgsm(small_model, *batch, 2.0)


def test_bim_one_step_equals_fgsm(small_model, batch):
    x, y = batch
    eps = 0.05
    cfg = AttackConfig("bim", eps, alpha=eps, iters=1, random_start=False)
    assert np.array_equal(attack_iterative(small_model, x, y, cfg), attack_fgsm(small_model, x, y, eps))


@given(st.sampled_from(["bim", "pgd"]), st.floats(0.005, 0.3), st.integers(1, 4), st.integers(0, 50))
@settings(max_examples=15, deadline=None)
def test_ball_and_box(small_model, batch, kind, eps, iters, seed):
    x, y = batch
    cfg = AttackConfig(kind, eps, iters=iters, seed=seed)
    out = attack_iterative(small_model, x, y, cfg)
    assert (linf_distance(x, out) <= eps + 1e-6).all()
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_pgd_deterministic_and_seeded(small_model, batch):
    x, y = batch
    a = attack_iterative(small_model, x, y, AttackConfig("pgd", 0.05, iters=2, seed=3))
    b = attack_iterative(small_model, x, y, AttackConfig("pgd", 0.05, iters=2, seed=3))
    c = attack_iterative(small_model, x, y, AttackConfig("pgd", 0.05, iters=2, seed=4))
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_pgd_random_start_keyed_by_sample_index(small_model, batch):
    """A sample's perturbation does not depend on which batch it is attacked in."""
    x, y = batch
    cfg = AttackConfig("pgd", 0.05, iters=1, seed=1)
    full = attack_iterative(small_model, x, y, cfg, indices=np.arange(len(x)))
    part = attack_iterative(small_model, x[5:9], y[5:9], cfg, indices=np.arange(5, 9))
    assert np.array_equal(full[5:9], part)


def test_fgsm_increases_loss(small_model, batch):
    x, y = batch
    before = per_sample_loss(small_model, x, y)
    after = per_sample_loss(small_model, attack_fgsm(small_model, x, y, 0.01), y)
    assert np.mean(after >= before) >= 0.95


def test_adversarial_set_filters(small_model, small_data):
    test = small_data[3]
    adv, matched = build_adversarial_set(small_model, test, AttackConfig("pgd", 0.1, seed=2))
    assert not adv.empty
    assert (np.argmax(predict_logits(small_model, adv.images), axis=1) != adv.labels).all()
    assert (np.argmax(predict_logits(small_model, matched.images), axis=1) == matched.labels).all()
    assert np.array_equal(matched.labels, adv.labels)
    assert set(adv.indices) <= set(adv.eligible)
    assert (linf_distance(matched.images, adv.images) <= 0.1 + 1e-6).all()


def test_zero_epsilon_gives_empty_set(small_model, small_data):
    adv, matched = build_adversarial_set(small_model, small_data[3], AttackConfig("pgd", 0.0))
    assert adv.empty and matched is None and len(adv.eligible) > 0


def test_adversarial_round_trip(tmp_path, small_model, small_data):
    adv, _ = build_adversarial_set(small_model, small_data[3], AttackConfig("fgsm", 0.1))
    save_adversarial_set(adv, tmp_path / "adv")
    back = load_adversarial_set(tmp_path / "adv")
    assert np.array_equal(back.images, adv.images) and np.array_equal(back.indices, adv.indices)
    assert back.config == adv.config
    assert back.as_dataset().is_adversarial


def test_adversarial_blob_tamper_detected(tmp_path, small_model, small_data):
    adv, _ = build_adversarial_set(small_model, small_data[3], AttackConfig("fgsm", 0.1))
    save_adversarial_set(adv, tmp_path / "adv")
    blob = tmp_path / "adv" / "images.f32"
    raw = bytearray(blob.read_bytes())
    raw[0] ^= 1
    blob.write_bytes(bytes(raw))
    with pytest.raises(DataError):
        load_adversarial_set(tmp_path / "adv")
