import json

import numpy as np
import pytest

from scenetext.component_tree import DARK_ON_LIGHT, LIGHT_ON_DARK
from scenetext.descriptors import CharacterCandidate
from scenetext.filtering import CHAR_FEATURES, SPACING_FEATURES
from scenetext.fixtures import Annotation, CharBox, Line, Word
from scenetext.linking import pair_feature_matrix
from scenetext.pipeline import PipelineConfig, detect
from scenetext.training import (label_candidates, metric_clusters, priors_from_text_samples,
                                read_cluster_file, read_samples, spacing_samples, train_all, write_cluster_file,
                                write_samples)


def cand(box):
    x, y, w, h = box
    return CharacterCandidate(box, w * h, 2.0, 0.1, 0.2, (10.0, 10.0, 10.0))


def annotation():
    hi = Word("hi", (10, 10, 25, 20), [CharBox("h", (10, 10, 10, 20)), CharBox("i", (25, 10, 10, 20))])
    yo = Word("yo", (50, 10, 25, 20), [CharBox("y", (50, 10, 10, 20)), CharBox("o", (65, 10, 10, 20))])
    return Annotation("img", DARK_ON_LIGHT, 100, 60, [Line((10, 10, 65, 20), [hi, yo])])


def test_label_candidates():
    ann = annotation()
    cands = [cand((10, 10, 10, 20)), cand((25, 11, 10, 19)), cand((50, 10, 10, 20)), cand((65, 10, 10, 20)),
             cand((12, 12, 3, 4)), cand((80, 45, 10, 10))]
    lab = label_candidates(cands, ann, DARK_ON_LIGHT, "img")
    assert lab.char == ["h", "i", "y", "o", None, None]
    assert lab.line == [0, 0, 0, 0, -1, -1]
    assert lab.word == [0, 0, 1, 1, -1, -1]
    assert lab.ambiguous == [False, False, False, False, True, False]
    other = label_candidates(cands, ann, LIGHT_ON_DARK)
    assert other.char == [None] * 6 and other.line == [-1] * 6


def labeled():
    cands = [cand((10, 10, 10, 20)), cand((25, 10, 10, 20)), cand((50, 10, 10, 20)), cand((65, 10, 10, 20)),
             cand((12, 12, 3, 4)), cand((80, 45, 10, 10))]
    return label_candidates(cands, annotation(), DARK_ON_LIGHT, "img")


def test_metric_clusters_drop_ambiguous_candidates():
    data = metric_clusters([labeled()])
    assert len(data.images) == 1
    image = data.images[0]
    assert image.n == 5 and image.clusters == [[0, 1, 2, 3]]


def test_spacing_samples_label_word_gaps():
    X, y = spacing_samples([labeled()])
    assert y.tolist() == [-1, 1, -1]
    assert X.shape == (3, len(SPACING_FEATURES))
    assert X[1, 0] == pytest.approx(15 / 20)


def test_cluster_file_round_trip(tmp_path):
    path = tmp_path / "clusters.json"
    write_cluster_file(path, [labeled()])
    data = read_cluster_file(path)
    kept = [c for c, amb in zip(labeled().candidates, labeled().ambiguous) if not amb]
    assert np.array_equal(data.images[0].features, pair_feature_matrix(kept))
    assert data.images[0].clusters == [[0, 1, 2, 3]]
    doc = json.loads(path.read_text())
    doc["images"][0]["clusters"] = [[0, 99]]
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="out of range"):
        read_cluster_file(path)
    del doc["images"][0]["candidates"][0]["bbox"]
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="malformed"):
        read_cluster_file(path)


def test_sample_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(7, len(CHAR_FEATURES)))
    y = np.array([1, -1, 1, 1, -1, -1, 1])
    path = tmp_path / "s.csv"
    write_samples(path, X, y, CHAR_FEATURES)
    X2, y2 = read_samples(path, CHAR_FEATURES)
    assert np.array_equal(X, X2) and np.array_equal(y, y2)
    with pytest.raises(ValueError, match="columns"):
        read_samples(path, SPACING_FEATURES)
    path.write_text(",".join(CHAR_FEATURES) + ",label\n" + ",".join(["1"] * 6) + ",0\n")
    with pytest.raises(ValueError, match="labels"):
        read_samples(path, CHAR_FEATURES)
    path.write_text("")
    with pytest.raises(ValueError, match="empty"):
        read_samples(path, CHAR_FEATURES)


def test_priors_from_text_samples():
    X = np.array([[0.1, 2], [0.2, 2], [0.0, 3]])
    table = priors_from_text_samples(X, np.array([1, -1, 1]))
    assert table.counts == {2: (2, 1), 3: (1, 1)}


def test_train_all_produces_working_models(fixture_corpus):
    models, summary = train_all(fixture_corpus, PipelineConfig(), seed=1, rounds=10, restarts=1, max_iters=3)
    assert summary.n_images == 20
    assert summary.n_char_samples[0] > 0 and summary.n_clusters > 0
    assert 0.5 < models.char_clf.validation_precision < 1
    assert models.char_clf.rounds <= 10
    text = summary.format()
    assert "metric learning:" in text and "restart 0" in text
    res = detect(fixture_corpus / "images" / "fixture_000.png", PipelineConfig(), models)
    assert res.counts["character_candidates"] > 0
