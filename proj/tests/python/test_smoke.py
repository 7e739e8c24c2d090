# Copyright 2026 The alseg Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.


import json
import math

import numpy as np
import pytest

import alseg


@pytest.fixture(scope="module")
def dataset():
    return alseg.generate_dataset(n_images=40, seed=3, height=24, width=24, void_radius_max=2.0)


def test_dataset_shapes_and_split(dataset):
    assert len(dataset) == 40
    assert dataset.n_classes == 5
    assert dataset.class_names[3] == "void"
    assert sorted(dataset.train_indices + dataset.test_indices) == list(range(40))
    image, mask = dataset.image(0), dataset.mask(0)
    assert image.shape == (24, 24, 1) and image.dtype == np.float32
    assert mask.shape == (24, 24) and mask.dtype == np.uint8
    assert 0.0 <= image.min() and image.max() <= 1.0
    assert math.isclose(sum(alseg.class_frequencies(dataset, dataset.train_indices)), 1.0)


def test_dataset_round_trip(dataset, tmp_path):
    dataset.save(tmp_path / "data")
    back = alseg.Dataset.load(tmp_path / "data")
    assert back.train_indices == dataset.train_indices
    assert np.array_equal(back.image(5), dataset.image(5))
    assert np.array_equal(back.mask(5), dataset.mask(5))


def test_bad_arguments_raise():
    with pytest.raises(alseg.ArgumentError):
        alseg.generate_dataset(n_images=9)
    with pytest.raises(ValueError):
        alseg.predict(alseg.init_params(), np.zeros((2, 2, 2, 2), dtype=np.float32))


def test_scores_match_hand_values():
    assert np.allclose(alseg.softmax(np.zeros(4, dtype=np.float32)), [0.25] * 4)
    assert math.isclose(alseg.entropy([0.25] * 4), math.log(4.0))
    probs = np.array([[[0.9, 0.1], [0.8, 0.2]], [[0.1, 0.9], [0.4, 0.6]]], dtype=np.float32)
    assert math.isclose(alseg.rareness(probs, [0.98, 0.02], "max"), math.exp(-0.02), rel_tol=1e-6)
    assert math.isclose(
        alseg.rareness(probs, [0.98, 0.02], "mean"), (math.exp(-0.98) + math.exp(-0.02)) / 2, rel_tol=1e-6
    )
    wce_probs = np.array([[[0.8, 0.2], [0.4, 0.6]]], dtype=np.float32)
    expected = (-math.log(0.8) - 3 * math.log(0.6)) / 4
    assert math.isclose(
        alseg.weighted_cross_entropy(wce_probs, np.array([[0, 1]], dtype=np.uint8), [1.0, 3.0]), expected, rel_tol=1e-6
    )
    views = np.array([[1, 0], [1, 0], [0, 1], [0, 1]], dtype=np.float32)
    assert math.isclose(alseg.info_nce_loss(views, 1.0), -math.log(math.e / (math.e + 2)), rel_tol=1e-6)
    m, per_class = alseg.miou(
        [np.array([[0, 0, 0, 1]], dtype=np.uint8)], [np.array([[0, 0, 1, 1]], dtype=np.uint8)], 2
    )
    assert math.isclose(m, 7 / 12) and math.isclose(per_class[0], 2 / 3)


def test_network_predict_and_train(dataset, tmp_path):
    params = alseg.init_params(seed=1)
    probs = alseg.predict(params, dataset.image(0))
    assert probs.shape == (24, 24, 5)
    assert np.allclose(probs.sum(axis=2), 1.0, atol=1e-5)
    assert alseg.predict_labels(params, dataset.image(0)).shape == (24, 24)
    assert len(alseg.image_embedding(params, dataset.image(0))) == params.dec_channels

    labelled = dataset.train_indices[:4]
    trained, history = alseg.train(params, dataset, labelled, epochs=3, batch_size=2, seed=2)
    again, history_again = alseg.train(params, dataset, labelled, epochs=3, batch_size=2, seed=2, threads=2)
    assert len(history) == 3 and history == history_again
    assert trained == again and not trained == params

    trained.save(tmp_path / "params.bin")
    assert alseg.NetParams.load(tmp_path / "params.bin") == trained


def test_selection_strategies(dataset):
    params = alseg.init_params(seed=1)
    labelled = dataset.train_indices[:4]
    for strategy in ("rareness_aware", "random", "entropy", "coreset"):
        picks = alseg.select(params, dataset, labelled, 5, strategy=strategy, seed=9)["picks"]
        assert len(picks) == 5 and len(set(picks)) == 5
        assert not set(picks) & set(labelled)
        assert set(picks) <= set(dataset.train_indices)
    out = alseg.select(params, dataset, labelled, 3)
    assert len(out["breakdowns"]) == 3 and math.isclose(sum(out["posterior"]), 1.0)


def test_oracles():
    assert alseg.check_greedy_oracle(5, 1)["passed"]
    assert alseg.check_reductions(3, 1)["passed"]
    report = alseg.check_ce_gradients(2, 1, "float64")
    assert report["passed"] and report["max_rel_error"] < 1e-4


def test_run_cli(tmp_path):
    code, _, err = alseg.run_cli(["run", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "o")])
    assert code == 2
    assert json.loads(err)["exit_code"] == 2
    code, out, _ = alseg.run_cli(["gen-data", "--out", str(tmp_path / "data"), "--seed", "4"])
    assert code == 0 and (tmp_path / "data" / "images.bin").exists()
