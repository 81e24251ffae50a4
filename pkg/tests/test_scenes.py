import json

import numpy as np
import pytest

from multipose.errors import ConfigurationError, FormatError
from multipose.quat import angular_error, canonicalize, from_matrix, multiply, to_matrix
from multipose.scenes import (SceneSample, SceneSpec, as_arrays, camera_pose, clean_features, generate, meta_path,
                              read_jsonl, trajectory_diameter, with_noise, write_jsonl)

SMALL = dict(n_train=40, n_test=24)


def _theta(t):
    return np.arctan2(t[1], t[0])


@pytest.mark.parametrize("kwargs", [dict(symmetry=0), dict(radius=0.0), dict(feature_dim=3), dict(noise=-1.0),
                                    dict(nuisance_dim=16), dict(height_range=(2.0, 1.0))])
def test_spec_validation(kwargs):
    with pytest.raises(ConfigurationError):
        SceneSpec(**kwargs)


def test_non_ambiguous_scene_has_one_mode():
    train, test = generate(SceneSpec(symmetry=1, **SMALL))
    assert all(len(s.gt_modes) == 1 for s in train + test)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 6])
def test_modes_structure(n):
    spec = SceneSpec(symmetry=n, **SMALL)
    _, test = generate(spec)
    rz = from_matrix(np.array([[np.cos(2 * np.pi / n), -np.sin(2 * np.pi / n), 0.0],
                               [np.sin(2 * np.pi / n), np.cos(2 * np.pi / n), 0.0], [0.0, 0.0, 1.0]]))
    for s in test:
        assert len(s.gt_modes) == n
        np.testing.assert_array_equal(s.gt_modes[0][0], s.gt_rot)
        np.testing.assert_array_equal(s.gt_modes[0][1], s.gt_trans)
        assert np.linalg.norm(s.gt_rot) == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(canonicalize(s.gt_rot), s.gt_rot, atol=1e-15)
        rots = np.array([q for q, _ in s.gt_modes])
        # closed under one more step of the symmetry
        for q in rots:
            assert angular_error(rots, multiply(rz, q)).min() < 1e-6


def test_two_fold_modes_are_half_turn_apart():
    _, test = generate(SceneSpec(symmetry=2, **SMALL))
    for s in test:
        assert angular_error(s.gt_modes[0][0], s.gt_modes[1][0]) == pytest.approx(180.0, abs=1e-6)


def test_quarter_turn_aliasing():
    spec = SceneSpec(symmetry=4)
    for theta in np.linspace(0.0, 2 * np.pi, 13):
        np.testing.assert_allclose(clean_features(spec, theta, 1.0), clean_features(spec, theta + np.pi / 2, 1.0),
                                   atol=1e-12)
    assert np.abs(clean_features(spec, 0.3, 1.0) - clean_features(spec, 0.3 + np.pi / 4, 1.0)).max() > 1e-2


@pytest.mark.parametrize("n", [2, 4])
def test_every_mode_aliases(n):
    spec = SceneSpec(symmetry=n, **SMALL)
    _, test = generate(spec)
    for s in test:
        ref = clean_features(spec, _theta(s.gt_trans), s.gt_trans[2])
        for _, t in s.gt_modes[1:]:
            np.testing.assert_allclose(clean_features(spec, _theta(t), t[2]), ref, atol=1e-12)


def test_camera_looks_at_origin():
    q, t = camera_pose(0.7, 1.2, 2.0)
    forward = to_matrix(q)[:, 2]
    np.testing.assert_allclose(forward, -t / np.linalg.norm(t), atol=1e-12)
    assert np.linalg.norm(t[:2]) == pytest.approx(2.0)


def test_generation_is_bit_identical():
    spec = SceneSpec(**SMALL)
    a_train, a_test = generate(spec)
    b_train, b_test = generate(spec)
    for a, b in zip(a_train + a_test, b_train + b_test):
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.gt_rot, b.gt_rot)
    c_train, _ = generate(SceneSpec(seed=1, **SMALL))
    assert not np.array_equal(a_train[0].features, c_train[0].features)


def test_splits_use_disjoint_azimuths():
    train, test = generate(SceneSpec(n_train=50, n_test=50))
    th_train = np.array([_theta(s.gt_trans) for s in train])
    th_test = np.array([_theta(s.gt_trans) for s in test])
    assert np.abs(th_train[:, None] - th_test[None, :]).min() > 1e-9
    # the test grid sits half a step off the stratification boundaries
    grid = np.mod(th_test, 2 * np.pi) / (2 * np.pi) * 50 - 0.5
    np.testing.assert_allclose(grid, np.round(grid), atol=1e-9)


def test_heights_in_range():
    spec = SceneSpec(height_range=(0.2, 0.9), **SMALL)
    train, test = generate(spec)
    h = np.array([s.gt_trans[2] for s in train + test])
    assert h.min() >= 0.2 and h.max() <= 0.9


def test_noise_scale():
    spec = SceneSpec(noise=0.2, n_train=400, n_test=1)
    train, _ = generate(spec)
    resid = [s.features - clean_features(spec, _theta(s.gt_trans), s.gt_trans[2]) for s in train]
    assert np.std(resid) == pytest.approx(0.2, rel=0.05)


def test_with_noise_selected_indices():
    spec = SceneSpec(**SMALL)
    _, test = generate(spec)
    noisy = with_noise(spec, test, 0.5, seed=3, indices=range(0, len(test), 2))
    for i, (a, b) in enumerate(zip(test, noisy)):
        if i % 2:
            assert a is b
        else:
            assert np.abs(a.features - b.features).max() > 0.05
            np.testing.assert_array_equal(a.gt_trans, b.gt_trans)
    again = with_noise(spec, test, 0.5, seed=3, indices=range(0, len(test), 2))
    np.testing.assert_array_equal(again[0].features, noisy[0].features)


def test_staircase_modes():
    spec = SceneSpec(symmetry=2, staircase_levels=3, staircase_period=0.5, **SMALL)
    _, test = generate(spec)
    for s in test:
        assert len(s.gt_modes) == 6
        dh = sorted({round(t[2] - s.gt_trans[2], 9) for _, t in s.gt_modes})
        assert len(dh) == 3 and all(abs(d / 0.5 - round(d / 0.5)) < 1e-9 for d in dh)
        ref = clean_features(spec, _theta(s.gt_trans), s.gt_trans[2])
        for _, t in s.gt_modes:
            np.testing.assert_allclose(clean_features(spec, _theta(t), t[2]), ref, atol=1e-12)


def test_trajectory_diameter_examples():
    train, _ = generate(SceneSpec(radius=2.0, n_train=400, n_test=1, height_range=(1.0, 1.0)))
    assert trajectory_diameter(train) == pytest.approx(4.0, abs=1e-3)
    assert trajectory_diameter([np.ones(3)] * 5) == 0.0
    assert trajectory_diameter([np.zeros(3), np.array([0.0, 7.0, 0.0])]) == pytest.approx(7.0)
    with pytest.raises(ConfigurationError):
        trajectory_diameter([np.zeros(3)])


def test_as_arrays():
    train, _ = generate(SceneSpec(**SMALL))
    X, Q, T = as_arrays(train)
    assert X.shape == (40, 16) and Q.shape == (40, 4) and T.shape == (40, 3)


def test_jsonl_round_trip(tmp_path):
    spec = SceneSpec(symmetry=3, **SMALL)
    _, test = generate(spec)
    path = tmp_path / "test.jsonl"
    write_jsonl(path, test, spec, "test")
    back, back_spec, split = read_jsonl(path)
    assert back_spec == spec and split == "test"
    for a, b in zip(test, back):
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.gt_rot, b.gt_rot)
        assert len(a.gt_modes) == len(b.gt_modes)
    rec = json.loads(path.read_text().splitlines()[0])
    assert set(rec) == {"features", "q", "t", "modes"}
    assert set(rec["modes"][0]) == {"q", "t"}


def test_jsonl_rejects_mismatches(tmp_path):
    spec = SceneSpec(**SMALL)
    _, test = generate(spec)
    path = tmp_path / "d.jsonl"
    bad = [SceneSample(s.features[:-1], s.gt_rot, s.gt_trans, s.gt_modes) for s in test[:2]]
    write_jsonl(path, bad, spec, "test")
    with pytest.raises(FormatError, match="dimension"):
        read_jsonl(path)
    write_jsonl(path, test[:2], spec, "test")
    with open(path, "a") as fh:
        fh.write("{not json\n")
    with pytest.raises(FormatError, match=":3:"):
        read_jsonl(path)
    (tmp_path / "orphan.jsonl").write_text("")
    with pytest.raises(FormatError, match="metadata"):
        read_jsonl(tmp_path / "orphan.jsonl")
    assert meta_path("x.jsonl") == "x.jsonl.meta.json"
