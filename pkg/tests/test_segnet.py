"""Tests of mtbridge.segnet and mtbridge.evaluation"""
import json
import logging
import struct

import numpy as np
import pytest

from mtbridge.autodiff import OptimState, Tape, backward, pixel_softmax_ce
from mtbridge.autodiff import sgd_step
from mtbridge.evaluation import evaluate
from mtbridge.exceptions import (
    ConfigError,
    ContractError,
    DataError,
    FileFormatError,
    ShapeError,
)
from mtbridge.fileformat import HEADER_OFFSET
from mtbridge.scenes import Dataset
from mtbridge.segnet import (
    ParamSet,
    SegNetConfig,
    clone_params,
    forward,
    init_params,
    load_checkpoint,
    predict,
    save_checkpoint,
)


def test_config_validate():
    """Test that invalid architectures are rejected"""
    SegNetConfig().validate()
    with pytest.raises(ConfigError):
        SegNetConfig(channels=(4, 3), num_classes=7).validate()
    with pytest.raises(ConfigError):
        SegNetConfig(channels=(), num_classes=7).validate()
    with pytest.raises(ConfigError):
        SegNetConfig(kernel=2).validate()
    with pytest.raises(ConfigError):
        SegNetConfig.from_dict({'channels': [2], 'depth': 3})
    config = SegNetConfig(channels=(4, 2), num_classes=2, kernel=5)
    assert SegNetConfig.from_dict(config.to_dict()) == config


def test_init_params():
    """Test the shapes and the seeding of the initial parameters"""
    config = SegNetConfig(channels=(4, 3), num_classes=3)
    params = init_params(config)
    assert params.names == [
        'conv0.weight',
        'conv0.bias',
        'conv1.weight',
        'conv1.bias',
    ]
    assert params.shapes == [(4, 3, 3, 3), (4,), (3, 4, 3, 3), (3,)]
    assert params.total_len == 4 * 27 + 4 + 3 * 36 + 3
    assert np.array_equal(params.flat(), init_params(config).flat())
    assert not np.array_equal(
        params.flat(), init_params(config, seed=1).flat()
    )
    assert np.all(params['conv1.bias'].data == 0)


def test_param_set():
    """Test congruence, cloning, and unique names of parameter sets"""
    params = init_params(SegNetConfig(channels=(2,), num_classes=2))
    clone = clone_params(params, trainable=False)
    assert clone.is_congruent(params)
    assert not clone.trainable
    assert not clone['conv0.weight'].requires_grad
    clone['conv0.weight'].data[...] = 0
    assert not np.all(params['conv0.weight'].data == 0)
    other = init_params(SegNetConfig(channels=(3,), num_classes=3))
    assert not other.is_congruent(params)
    with pytest.raises(ContractError):
        ParamSet([('a', np.ones(2)), ('a', np.ones(2))])


def test_forward_shapes():
    """Test that the logits have the shape of the image"""
    params = init_params(SegNetConfig(channels=(4, 3), num_classes=3))
    image = np.random.default_rng(0).uniform(size=(3, 9, 7))
    assert forward(params, image).shape == (3, 9, 7)
    label, probs = predict(params, image)
    assert label.shape == (9, 7)
    assert np.allclose(probs.sum(axis=0), 1.0)
    with pytest.raises(ShapeError):
        forward(params, np.zeros((2, 9, 7)))


def test_zero_init_predicts_first_class():
    """Test that a network with all-zero parameters predicts class 0"""
    config = SegNetConfig(channels=(4, 3), num_classes=3, init_scale=0.0)
    params = init_params(config)
    image = np.random.default_rng(0).uniform(size=(3, 6, 6))
    label, probs = predict(params, image)
    assert np.all(label == 0)
    assert np.allclose(probs, 1.0 / 3)


def _threshold_dataset(seed, count=4, size=8):
    """Scenes whose label is whether the red channel exceeds 0.5"""
    rng = np.random.default_rng(seed)
    images = rng.uniform(0.6, 1.0, size=(count, 3, size, size))
    flip = rng.random((count, size, size)) < 0.5
    images[:, 0][flip] -= 0.6
    labels = (images[:, 0] > 0.5).astype(int)
    return Dataset('toy', 'train', images, labels, num_classes=2)


def test_learns_trivial_task():
    """Test that a single 1x1 convolution learns a per-pixel threshold"""
    config = SegNetConfig(channels=(2,), num_classes=2, kernel=1)
    params = init_params(config)
    state = OptimState(momentum=0.9, weight_decay=0.0)
    train = _threshold_dataset(seed=0)
    for _ in range(100):
        for sample in train.samples:
            with Tape():
                logits = forward(params, sample.image)
                backward(pixel_softmax_ce(logits, sample.label))
            sgd_step(params, state, lr=0.3)
    val = _threshold_dataset(seed=1)
    (report,) = evaluate(params, [val])
    assert report.miou > 0.9
    assert report.avg_miou == report.miou


def test_evaluate_errors():
    """Test that evaluation requires labeled, matching datasets"""
    params = init_params(SegNetConfig(channels=(2,), num_classes=2))
    unlabeled = Dataset('d', 'val', np.zeros((1, 3, 4, 4)), None, 2)
    with pytest.raises(DataError):
        evaluate(params, [unlabeled])
    other = Dataset(
        'd', 'val', np.zeros((1, 3, 4, 4)), np.zeros((1, 4, 4), int), 3
    )
    with pytest.raises(DataError):
        evaluate(params, {'d': other})


def test_checkpoint_round_trip(tmpdir):
    """Test writing, reading, and evaluating a checkpoint file"""
    config = SegNetConfig(channels=(4, 2), num_classes=2)
    params = init_params(config, seed=3)
    filename = str(tmpdir.join('teacher.odbc'))
    save_checkpoint(filename, params, config, iteration=17)
    loaded, loaded_config, iteration = load_checkpoint(filename)
    assert loaded_config == config
    assert iteration == 17
    assert not loaded.trainable
    assert loaded.names == params.names
    assert np.array_equal(loaded.flat(), params.flat())
    val = _threshold_dataset(seed=2)
    assert evaluate(filename, [val])[0].miou == evaluate(params, [val])[0].miou
    with pytest.raises(DataError):
        load_checkpoint(filename, config=SegNetConfig())


def test_corrupt_checkpoint(tmpdir):
    """Test that corrupt checkpoints are rejected"""
    config = SegNetConfig(channels=(2,), num_classes=2)
    params = init_params(config)
    filename = str(tmpdir.join('bad.odbc'))

    save_checkpoint(filename, params, config)
    with open(filename, 'ab') as fh:
        fh.write(b'\0' * 8)
    with pytest.raises(FileFormatError):
        load_checkpoint(filename)

    save_checkpoint(filename, params, config)
    with open(filename, 'r+b') as fh:
        fh.write(b'ODBD')
    with pytest.raises(FileFormatError) as exc_info:
        load_checkpoint(filename)
    assert exc_info.value.offset == 0

    # parameters that do not belong to the stored architecture
    wrong = init_params(SegNetConfig(channels=(3,), num_classes=3))
    save_checkpoint(filename, wrong, config)
    with pytest.raises(FileFormatError) as exc_info:
        load_checkpoint(filename)
    assert exc_info.value.offset == 12

    with open(filename, 'wb') as fh:
        fh.write(struct.pack('<4sII', b'ODBC', 1, 5) + b'{"a":')
    with pytest.raises(FileFormatError) as exc_info:
        load_checkpoint(filename)
    assert exc_info.value.offset == 12


def test_checkpoint_beyond_max_iter(tmpdir, caplog):
    """Test the warning for a checkpoint written after max_iter iterations"""
    config = SegNetConfig(channels=(2,), num_classes=2)
    filename = str(tmpdir.join('teacher.odbc'))
    save_checkpoint(filename, init_params(config), config, iteration=30)
    with caplog.at_level(logging.WARNING, logger='mtbridge'):
        load_checkpoint(filename, max_iter=30)
    assert caplog.records == []
    with caplog.at_level(logging.WARNING, logger='mtbridge'):
        load_checkpoint(filename, max_iter=20)
    assert 'more than max_iter=20' in caplog.text


def test_checkpoint_invalid_iteration(tmpdir):
    config = SegNetConfig(channels=(2,), num_classes=2)
    header = json.dumps(
        {'config': config.to_dict(), 'iteration': 'last', 'params': []}
    ).encode('utf8')
    filename = str(tmpdir.join('bad.odbc'))
    with open(filename, 'wb') as fh:
        fh.write(struct.pack('<4sII', b'ODBC', 1, len(header)) + header)
    with pytest.raises(FileFormatError) as exc_info:
        load_checkpoint(filename)
    assert exc_info.value.offset == HEADER_OFFSET
