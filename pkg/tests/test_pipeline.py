import json
import shutil

import numpy as np
import pytest
from PIL import Image, ImageDraw, ImageFont

from scenetext.component_tree import DARK_ON_LIGHT, LIGHT_ON_DARK, MserParams
from scenetext.evaluation import match_score
from scenetext.models_io import load_models
from scenetext.pipeline import (ImageLoadError, PipelineConfig, config_from_mapping, detect, detect_batch,
                                draw_overlay, list_images, load_config, load_image)

MODELS = load_models()
WORDS = PipelineConfig(words=True)


def hello_world(size=48, invert=False):
    """Black-on-white render with ink-tight word boxes."""
    font = ImageFont.load_default(size)
    im = Image.new("L", (640, 480), 235)
    draw = ImageDraw.Draw(im)
    x, spans = 60, []
    for word in ("HELLO", "WORLD"):
        draw.text((x, 200), word, fill=25, font=font)
        spans.append(draw.textbbox((x, 200), word, font=font))
        x = spans[-1][2] + size
    arr = np.asarray(im)
    boxes = []
    for l, t, r, b in spans:
        ys, xs = np.nonzero(arr[t:b, l:r] < 130)
        boxes.append((l + int(xs.min()), t + int(ys.min()), int(xs.max() - xs.min()) + 1,
                      int(ys.max() - ys.min()) + 1))
    return (255 - arr if invert else arr), boxes


def test_blank_image_has_no_boxes():
    res = detect(np.full((120, 160, 3), 255, np.uint8), WORDS, MODELS)
    assert res.boxes == [] and res.counts["boxes"] == 0


@pytest.mark.parametrize("invert", [False, True])
def test_hello_world(invert):
    img, gt = hello_world(invert=invert)
    res = detect(img, WORDS, MODELS)
    for g in gt:
        assert max(match_score(g, b) for b in res.boxes) >= 0.5
    expected = LIGHT_ON_DARK if invert else DARK_ON_LIGHT
    assert {d.polarity for d in res.detections} == {expected}


def test_inverted_image_gives_same_boxes():
    img, _ = hello_world()
    a = detect(img, WORDS, MODELS).boxes
    b = detect(255 - img, WORDS, MODELS).boxes
    assert a == b


def test_stage_counts_and_bounds(small_corpus):
    for path in list_images(small_corpus / "images"):
        res = detect(path, WORDS, MODELS)
        c = res.counts
        assert c["character_candidates"] <= c["msers"] <= c["extremal_regions"]
        assert c["after_elimination"] <= c["text_candidates"]
        assert c["after_classification"] <= c["after_elimination"]
        assert c["boxes"] <= c["boxes_before_merge"]
        h, w = res.shape
        for x, y, bw, bh in res.boxes:
            assert 0 <= x and 0 <= y and x + bw <= w and y + bh <= h and bw >= 1 and bh >= 1
        assert res.timings_ms["total"] > 0
        json.dumps(res.report())


def test_single_polarity_config(small_corpus):
    path = list_images(small_corpus / "images")[1]  # light-on-dark
    only_dark = PipelineConfig(mser=MserParams(min_area=20, polarity=DARK_ON_LIGHT))
    res = detect(path, only_dark, MODELS)
    assert all(d.polarity == DARK_ON_LIGHT for d in res.detections)
    assert res.counts["msers"] < detect(path, PipelineConfig(), MODELS).counts["msers"]


def test_detection_is_deterministic(small_corpus):
    path = list_images(small_corpus / "images")[0]
    assert detect(path, WORDS, MODELS).boxes == detect(path, WORDS, MODELS).boxes


def test_batch_deterministic_across_workers(small_corpus, tmp_path):
    one = detect_batch(small_corpus / "images", WORDS, gt_dir=small_corpus / "gt", workers=1, models=MODELS)
    four = detect_batch(small_corpus / "images", WORDS, gt_dir=small_corpus / "gt", workers=4, models=MODELS)
    assert [r.boxes for r in one.results] == [r.boxes for r in four.results]
    assert [r.name for r in one.results] == sorted(r.name for r in one.results)
    assert one.total.f == four.total.f


def test_batch_isolates_corrupt_files(small_corpus, tmp_path):
    images = tmp_path / "images"
    shutil.copytree(small_corpus / "images", images)
    (images / "broken.png").write_bytes(b"not a png")
    out = tmp_path / "out"
    report = detect_batch(images, WORDS, gt_dir=small_corpus / "gt", out_dir=out, models=MODELS)
    assert list(report.errors) == ["broken.png"]
    assert len(report.results) == 4
    assert len(report.scores) == 4
    assert sorted(p.name for p in out.glob("*.txt")) == [f"fixture_{i:03d}.txt" for i in range(4)]
    assert json.loads((out / "summary.json").read_text())["aggregation"] == "micro"
    assert "TOTAL" in report.table()


def test_batch_missing_ground_truth_warns(small_corpus, tmp_path):
    gt = tmp_path / "gt"
    shutil.copytree(small_corpus / "gt", gt)
    (gt / "fixture_002.txt").unlink()
    report = detect_batch(small_corpus / "images", WORDS, gt_dir=gt, models=MODELS, workers=1)
    assert len(report.scores) == 3
    assert any("fixture_002" in w for w in report.warnings)


def test_batch_empty_dir(tmp_path):
    report = detect_batch(tmp_path, WORDS, models=MODELS)
    assert report.results == [] and report.errors == {} and report.total is None
    report = detect_batch(tmp_path, WORDS, gt_dir=tmp_path, models=MODELS)
    assert report.total.n_gt == 0 and report.table() == "no scored images"
    with pytest.raises(NotADirectoryError):
        detect_batch(tmp_path / "missing", WORDS, models=MODELS)


def test_load_image_errors(tmp_path):
    with pytest.raises(ImageLoadError):
        load_image(tmp_path / "absent.png")
    with pytest.raises(ImageLoadError):
        load_image(np.zeros((4, 4, 2)))
    rgb, name = load_image(np.full((3, 4), 300.0))
    assert rgb.shape == (3, 4, 3) and rgb.dtype == np.uint8 and rgb.max() == 255 and name == "image"


def test_dump_stages_and_overlay(tmp_path):
    img, _ = hello_world()
    path = tmp_path / "hello.png"
    Image.fromarray(img).save(path)
    cfg = config_from_mapping({"dump_stages": str(tmp_path / "dump"), "words": "yes"})
    res = detect(path, cfg, MODELS)
    data = json.loads((tmp_path / "dump" / "hello.stages.json").read_text())
    assert set(data["stages"]) == {DARK_ON_LIGHT, LIGHT_ON_DARK}
    assert data["boxes"] == [list(b) for b in res.boxes]
    outline = (tmp_path / "dump" / f"hello.{DARK_ON_LIGHT}.msers.txt").read_text()
    assert "level=" in outline
    draw_overlay(path, res.boxes, tmp_path / "overlay.png")
    over = np.asarray(Image.open(tmp_path / "overlay.png"))
    x, y, _, _ = res.boxes[0]
    assert tuple(over[y, x]) == (255, 0, 0)


def test_config_parsing(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("# detector settings\ndelta = 2\nepsilon = 0.9  # looser\nwords = on\n"
                    "polarity = dark-on-light\nmerge-overlap = 0.5\n", encoding="utf-8")
    cfg = load_config(path)
    assert cfg.mser.delta == 2 and cfg.mser.polarity == "dark-on-light" and cfg.mser.min_area == 20
    assert cfg.elimination.epsilon == 0.9 and cfg.words is True and cfg.merge_overlap == 0.5
    for bad in ("nonsense = 1\n", "delta\n", "words = maybe\n", "epsilon = 2\n"):
        path.write_text(bad, encoding="utf-8")
        with pytest.raises(ValueError):
            load_config(path)


def test_words_need_a_spacing_model(tmp_path):
    from scenetext.models_io import Models, save_models

    save_models(tmp_path, Models(MODELS.metric, MODELS.char_clf, MODELS.text_clf, MODELS.priors))
    with pytest.raises(ValueError, match="spacing"):
        PipelineConfig(models_dir=str(tmp_path), words=True).load_models()
    assert PipelineConfig(models_dir=str(tmp_path)).load_models().spacing_clf is None
