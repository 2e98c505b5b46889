import struct

import numpy as np
import pytest

from lrlab.checkpoint import read_container, write_container
from lrlab.data import Dataset, generate_synthetic
from lrlab.errors import (BuildError, CheckpointError, ConsistencyError, DataError, InputError, MagicError,
                          TruncatedError, VersionError)
from lrlab.nn import (LayerSpec, build_model, desk_spec, evaluate_accuracy, forward_with_taps, load_checkpoint,
                      predict_logits, save_checkpoint, train_classifier)


@pytest.fixture(scope="module")
def desk():
    return build_model(desk_spec(), (1, 28, 28), 4, seed=1)


def expected_shapes():
    """Hand shape propagation for the desk graph on 1x28x28."""
    def out(s, stride):
        return (s + 2 - 3) // stride + 1

    h1 = out(28, 1)
    h2 = out(h1, 2)
    h3 = out(h2, 2)
    return [(8, h1, h1)] * 2 + [(16, h2, h2)] * 2 + [(32, h3, h3)] * 2 + [(32 * h3 * h3,), (64,), (64,), (4,)]


def test_desk_shapes_and_feature_layer(desk):
    assert desk.out_shapes == expected_shapes()
    assert desk.feature_layer == "relu4" and desk.out_shapes[desk.feature_index] == (64,)
    assert desk.layers[desk.feature_index + 1].name == "head"


def test_empty_spec_fails():
    with pytest.raises(BuildError):
        build_model([], (1, 28, 28), 4, 0)


def test_noncomposable_names_layer():
    spec = [LayerSpec("conv3x3", "c", 4), LayerSpec("dense", "d", 3), LayerSpec("dense", "h", 2)]
    with pytest.raises(BuildError, match="'d'"):
        build_model(spec, (1, 8, 8), 2, 0)


def test_duplicate_names_rejected():
    spec = [LayerSpec("flatten", "a"), LayerSpec("dense", "a", 3), LayerSpec("dense", "h", 2)]
    with pytest.raises(BuildError):
        build_model(spec, (1, 4, 4), 2, 0)


def test_same_seed_same_init():
    a = build_model(desk_spec(), (1, 28, 28), 4, seed=3)
    b = build_model(desk_spec(), (1, 28, 28), 4, seed=3)
    assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)


def test_init_bounds(desk):
    w = desk.params["fc1.weight"].data
    bound = np.sqrt(6.0 / w.shape[0]) if w.ndim == 2 else None
    assert np.abs(w).max() <= bound
    assert not desk.params["fc1.bias"].data.any()


def test_zero_input_finite(desk):
    logits, acts = forward_with_taps(desk, np.zeros((2, 1, 28, 28), dtype=np.float32))
    assert np.isfinite(logits.data).all()
    assert all(np.isfinite(t.data).all() for _, t in acts)


def test_taps_complete_and_logits_last(desk):
    x = np.random.default_rng(0).random((3, 1, 28, 28)).astype(np.float32)
    logits, acts = forward_with_taps(desk, x)
    assert len(acts) == len(desk.layers)
    assert acts.names() == [layer.name for layer in desk.layers]
    for (_, t), shape in zip(acts, desk.out_shapes):
        assert t.shape[1:] == shape
    assert np.array_equal(acts[-1].data, logits.data)


def test_batch_equals_single(desk):
    x = np.random.default_rng(1).random((2, 1, 28, 28)).astype(np.float32)
    both = forward_with_taps(desk, x)[0].data
    singles = np.concatenate([forward_with_taps(desk, x[i:i + 1])[0].data for i in range(2)])
    assert np.abs(both - singles).max() < 1e-6


def test_forward_is_pure(desk):
    before = {k: v.data.copy() for k, v in desk.params.items()}
    forward_with_taps(desk, np.ones((1, 1, 28, 28), dtype=np.float32))
    assert all(np.array_equal(before[k], desk.params[k].data) for k in before)


def test_wrong_input_shape(desk):
    with pytest.raises(InputError):
        forward_with_taps(desk, np.zeros((1, 1, 27, 28), dtype=np.float32))


def test_one_epoch_reduces_loss():
    ds = generate_synthetic(0, 10)
    m = build_model(desk_spec(), (1, 28, 28), 4, seed=0)
    from lrlab.tensor import softmax_cross_entropy

    def loss(model):
        return softmax_cross_entropy(predict_logits(model, ds.images), ds.labels).item()

    trained, hist = train_classifier(m, ds, epochs=1, batch=10, lr=1e-2, seed=0)
    assert loss(trained) < loss(m)
    assert len(hist.loss) == 1 and len(hist.accuracy) == 1


def test_lr_zero_keeps_params():
    ds = generate_synthetic(0, 12)
    m = build_model(desk_spec(), (1, 28, 28), 4, seed=0)
    trained, _ = train_classifier(m, ds, epochs=1, batch=4, lr=0.0, seed=0)
    assert all(np.array_equal(m.params[k].data, trained.params[k].data) for k in m.params)


def test_training_deterministic():
    ds = generate_synthetic(0, 16)
    m = build_model(desk_spec(), (1, 28, 28), 4, seed=0)
    a, _ = train_classifier(m, ds, epochs=1, batch=4, seed=2)
    b, _ = train_classifier(m, ds, epochs=1, batch=4, seed=2)
    assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)


def test_train_rejects_bad_arguments(desk):
    with pytest.raises(DataError):
        train_classifier(desk, generate_synthetic(0, 8), epochs=0)


def test_accuracy_matches_loop(small_model, small_data):
    test = small_data[3]
    correct = 0
    for i in range(len(test)):
        logits = forward_with_taps(small_model, test.images[i:i + 1])[0].data[0]
        correct += int(np.argmax(logits) == test.labels[i])
    assert evaluate_accuracy(small_model, test) == correct / len(test)


def test_accuracy_perfect_and_permuted(small_model, small_data):
    test = small_data[3]
    pred = np.argmax(predict_logits(small_model, test.images), axis=1)
    assert evaluate_accuracy(small_model, Dataset(test.images, pred, 4)) == 1.0
    assert evaluate_accuracy(small_model, Dataset(test.images, (pred + 1) % 4, 4)) < 1.0


# ----------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip(tmp_path, small_model):
    path = save_checkpoint(small_model, tmp_path / "m.lrck")
    loaded = load_checkpoint(path)
    x = np.random.default_rng(4).random((5, 1, 28, 28)).astype(np.float32)
    assert np.array_equal(predict_logits(small_model, x), predict_logits(loaded, x))
    assert loaded.feature_layer == small_model.feature_layer


def _write(path, magic=b"LRCK", version=1, header=b"{}", blob=b""):
    path.write_bytes(struct.pack("<4sII", magic, version, len(header)) + header + blob)


def test_bad_magic(tmp_path, small_model):
    p = save_checkpoint(small_model, tmp_path / "m.lrck")
    raw = bytearray(p.read_bytes())
    raw[:4] = b"XXXX"
    p.write_bytes(bytes(raw))
    with pytest.raises(MagicError):
        load_checkpoint(p)


def test_bad_version(tmp_path):
    _write(tmp_path / "v.lrck", version=2, header=b'{"blob_bytes":0}')
    with pytest.raises(VersionError):
        read_container(tmp_path / "v.lrck")


def test_truncated_blob(tmp_path, small_model):
    p = save_checkpoint(small_model, tmp_path / "m.lrck")
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(TruncatedError):
        load_checkpoint(p)


def test_truncated_header(tmp_path):
    _write(tmp_path / "t.lrck", header=b'{"blob_bytes":0}')
    p = tmp_path / "t.lrck"
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(TruncatedError):
        read_container(p)


def test_param_count_mismatch(tmp_path):
    write_container(tmp_path / "c.lrck", {"param_count": 5}, [np.zeros(4)])
    with pytest.raises(ConsistencyError):
        read_container(tmp_path / "c.lrck")


def test_errors_are_distinct():
    kinds = {MagicError, VersionError, TruncatedError, ConsistencyError}
    assert len(kinds) == 4 and all(issubclass(k, CheckpointError) for k in kinds)


def test_detector_file_is_not_a_model(tmp_path):
    write_container(tmp_path / "d.lrck", {"kind": "detector"}, [])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "d.lrck")


def test_parameters_are_float32(desk, small_model):
    for m in (desk, small_model):
        assert all(p.data.dtype == np.float32 for p in m.parameters())
