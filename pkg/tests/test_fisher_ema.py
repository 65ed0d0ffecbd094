"""Tests of mtbridge.fisher_ema"""
import logging

import numpy as np
import pytest

from mtbridge.autodiff import Tape, backward, pixel_softmax_ce
from mtbridge.exceptions import (
    ConfigError,
    ContractError,
    FileFormatError,
    ShapeError,
)
from mtbridge.fisher_ema import (
    FisherCoefficients,
    FisherEMA,
    af_ema_update,
    compute_fisher,
    normalize_clip,
)
from mtbridge.mean_teacher import TeacherStudent, ema_update
from mtbridge.scenes import Dataset
from mtbridge.segnet import SegNetConfig, clone_params, forward, init_params


CONFIG = SegNetConfig(channels=(4, 3), num_classes=3)


def _pair(seed):
    student = init_params(CONFIG, seed=seed)
    teacher = clone_params(init_params(CONFIG, seed=seed + 1000), False)
    return TeacherStudent(student, teacher, alpha=0.99)


def _images(seed, count=5):
    return np.random.default_rng(seed).uniform(size=(count, 3, 6, 6))


def test_fisher_of_single_sample():
    """Test that the Fisher information of one scene is its squared
    gradient"""
    teacher = clone_params(init_params(CONFIG), trainable=False)
    image = _images(0, count=1)
    fisher = compute_fisher(teacher, image)
    params = clone_params(teacher, trainable=True)
    with Tape():
        logits = forward(params, image[0])
        label = np.argmax(logits.data, axis=0)
        backward(pixel_softmax_ce(logits, label))
    for (f, t) in zip(fisher, params.tensors):
        assert np.allclose(f, t.grad ** 2, rtol=0, atol=1e-12)


def test_fisher_properties():
    """Test that the Fisher information is non-negative and leaves the
    teacher unchanged"""
    teacher = clone_params(init_params(CONFIG, seed=3), trainable=False)
    before = teacher.flat()
    fisher = compute_fisher(teacher, _images(1))
    assert [f.shape for f in fisher] == teacher.shapes
    assert all(np.all(f >= 0) for f in fisher)
    assert np.array_equal(teacher.flat(), before)
    assert all(t.grad is None for t in teacher.tensors)
    with pytest.raises(ContractError):
        compute_fisher(teacher, np.zeros((0, 3, 6, 6)))


def test_fisher_does_not_read_labels():
    """Test that the Fisher information uses pseudo-labels only"""
    images = _images(2)
    labels = np.zeros((5, 6, 6), dtype=int)
    dataset = Dataset('city_a', 'train', images, labels, 3)
    teacher = clone_params(init_params(CONFIG), trainable=False)
    fisher = compute_fisher(teacher, dataset, max_samples=3)
    assert dataset.label_reads == 0
    expected = compute_fisher(teacher, images[[0, 2, 4]])
    for (a, b) in zip(fisher, expected):
        assert np.array_equal(a, b)


def test_normalize_clip():
    """Test that the coefficients lie within the clipping bounds"""
    rng = np.random.default_rng(4)
    raw = [rng.exponential(size=(3, 4)), rng.exponential(size=5)]
    for scope in ('tensor', 'global'):
        adjusted = normalize_clip(raw, 0.99, 0.9999, scope=scope)
        assert [a.shape for a in adjusted] == [(3, 4), (5,)]
        for a in adjusted:
            assert np.all(a >= 0.99)
            assert np.all(a <= 0.9999)
    # the largest value of every tensor maps to lambda2
    adjusted = normalize_clip(raw, 0.99, 0.9999, scope='tensor')
    assert all(a.max() == 0.9999 for a in adjusted)


def test_normalize_clip_constant():
    """Test that constant Fisher information maps to lambda1"""
    adjusted = normalize_clip([np.zeros(3), np.full(2, 7.0)], 0.5, 0.9)
    assert adjusted[0].tolist() == [0.5, 0.5, 0.5]
    assert adjusted[1].tolist() == [0.5, 0.5]


def test_normalize_clip_invalid():
    """Test that invalid bounds and scopes are rejected"""
    with pytest.raises(ConfigError):
        normalize_clip([np.ones(2)], 0.9999, 0.99)
    with pytest.raises(ConfigError):
        normalize_clip([np.ones(2)], -0.1, 0.99)
    with pytest.raises(ConfigError):
        normalize_clip([np.ones(2)], scope='layer')


def test_constant_coefficients_match_ema():
    """Test that constant coefficients reproduce the plain EMA update
    bit-exactly"""
    for seed in range(50):
        pair_a = _pair(seed)
        pair_b = _pair(seed)
        adjusted = [np.full(shape, 0.99) for shape in pair_a.teacher.shapes]
        af_ema_update(pair_a, adjusted)
        ema_update(pair_b)
        assert np.array_equal(pair_a.teacher.flat(), pair_b.teacher.flat())
        assert pair_a.teacher_updates == pair_b.teacher_updates == 1


def test_af_ema_update_per_element():
    """Test the update with per-element coefficients"""
    pair = _pair(0)
    teacher, student = pair.teacher.flat(), pair.student.flat()
    rng = np.random.default_rng(5)
    adjusted = [rng.uniform(size=shape) for shape in pair.teacher.shapes]
    af_ema_update(pair, adjusted)
    f = np.concatenate([a.ravel() for a in adjusted])
    assert np.allclose(
        pair.teacher.flat(), f * teacher + (1 - f) * student, atol=1e-15
    )
    with pytest.raises(ShapeError):
        af_ema_update(pair, adjusted[:-1])


def test_fisher_ema_switches_rule():
    """Test that FisherEMA uses plain EMA until the first refresh"""
    pair_a, pair_b = _pair(1), _pair(1)
    fisher_ema = FisherEMA(lambda1=0.99, lambda2=0.9999)
    fisher_ema.update(pair_a)
    ema_update(pair_b)
    assert np.array_equal(pair_a.teacher.flat(), pair_b.teacher.flat())
    event = fisher_ema.refresh(pair_a.teacher, _images(6), 'city_a')
    assert event['event'] == 'fisher_computed'
    assert event['domain'] == 'city_a'
    assert event['num_samples'] == event['dataset_size'] == 5
    assert 0.99 <= event['adjusted_min'] <= event['adjusted_max'] <= 0.9999
    assert fisher_ema.coefficients.computed_on == 'city_a'
    fisher_ema.update(pair_a)
    af_ema_update(pair_b, fisher_ema.coefficients.adjusted)
    assert np.array_equal(pair_a.teacher.flat(), pair_b.teacher.flat())


def test_fisher_ema_invalid():
    """Test that an invalid FisherEMA configuration is rejected"""
    with pytest.raises(ConfigError):
        FisherEMA(lambda1=1.0, lambda2=0.5)
    with pytest.raises(ConfigError):
        FisherEMA(scope='layer')


def test_refresh_warns_about_sample_cap(caplog):
    """Test the warning if the Fisher information uses a subset of scenes"""
    teacher = clone_params(init_params(CONFIG), trainable=False)
    fisher_ema = FisherEMA(max_samples=2)
    with caplog.at_level(logging.WARNING):
        event = fisher_ema.refresh(teacher, _images(7), 'city_b')
    assert 'limited to 2 of 5 samples' in caplog.text
    assert event['num_samples'] == 2


def test_coefficients_dump_load(tmpdir):
    """Test writing and reading Fisher coefficients"""
    teacher = clone_params(init_params(CONFIG), trainable=False)
    fisher_ema = FisherEMA()
    fisher_ema.refresh(teacher, _images(8), 'city_a')
    coeffs = fisher_ema.coefficients
    filename = str(tmpdir.join('fisher.odbf'))
    coeffs.dump(filename)
    loaded = FisherCoefficients.load(filename)
    assert loaded.computed_on == 'city_a'
    assert loaded.names == teacher.names
    assert loaded.num_samples == 5
    arrays = zip(loaded.raw + loaded.adjusted, coeffs.raw + coeffs.adjusted)
    for (a, b) in arrays:
        assert np.array_equal(a, b)
    with open(filename, 'ab') as fh:
        fh.write(b'\0')
    with pytest.raises(FileFormatError):
        FisherCoefficients.load(filename)


def _zero_teacher_unit_student():
    pair = _pair(2)
    for t in pair.teacher.tensors:
        t.data[...] = 0.0
    for t in pair.student.tensors:
        t.data[...] = 1.0
    return pair


def test_af_ema_update_upper_bound():
    """Test that the slowest coefficient moves the teacher by 1 - lambda2"""
    pair = _zero_teacher_unit_student()
    adjusted = [np.full(shape, 0.9999) for shape in pair.teacher.shapes]
    af_ema_update(pair, adjusted)
    assert np.allclose(pair.teacher.flat(), 1e-4, rtol=0, atol=1e-15)


def test_important_parameters_change_less():
    """Test that larger coefficients give smaller teacher updates"""
    pair = _zero_teacher_unit_student()
    rng = np.random.default_rng(9)
    raw = [rng.exponential(size=shape) for shape in pair.teacher.shapes]
    adjusted = normalize_clip(raw, 0.99, 0.9999)
    af_ema_update(pair, adjusted)
    f = np.concatenate([a.ravel() for a in adjusted])
    change = np.abs(pair.teacher.flat())
    order = np.argsort(f)
    assert np.all(np.diff(f[order]) >= 0)
    assert np.all(np.diff(change[order]) <= 0)
    larger = f[:, None] > f[None, :]
    assert np.all((change[:, None] < change[None, :])[larger])
