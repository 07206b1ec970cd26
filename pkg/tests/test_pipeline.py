import logging

import numpy as np
import pytest

from restain.imagecore import RgbImage, default_styles, synth_corpus, synth_image
from restain.pipeline import (HistComparison, TrainConfig, Trainer, TrainingError, center_crop4, decompose,
                              dye_histogram, histogram_compare, restain_image, stability_experiment,
                              wasserstein1, write_loss_log, LOSS_COLUMNS)
from restain.colorspace import rgb_to_lab
from restain.tensornet import GeneratorNet, load_checkpoint

STYLE_A, STYLE_B = default_styles(0)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    return synth_corpus(STYLE_A, STYLE_B, 2, tmp_path_factory.mktemp("c"), size=32)


def test_config_validation(corpus):
    with pytest.raises(ValueError):
        TrainConfig(data=corpus, epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(data=corpus, patch_size=30)


def test_empty_domain(corpus):
    with pytest.raises(TrainingError):
        Trainer(TrainConfig(data=corpus, style_label="Z", patch_size=16)).run()


def test_training_runs_checkpoints_and_resumes(corpus, tmp_path):
    ckpt = tmp_path / "m.rsnm"
    cfg = TrainConfig(data=corpus, patch_size=16, epochs=2, batch_size=2, steps_per_epoch=2, checkpoint=ckpt)
    t = Trainer(cfg)
    hist = t.run()
    assert len(hist) == 4 and [r["epoch"] for r in hist] == [0, 0, 1, 1]
    assert hist[2]["lr"] == pytest.approx(1.2e-4)
    assert load_checkpoint(ckpt).epoch == 2

    resumed = Trainer(TrainConfig(data=corpus, patch_size=16, epochs=1, batch_size=2, steps_per_epoch=2,
                                  checkpoint=ckpt, resume=True))
    assert resumed.epoch == 2 and resumed.step == 4
    more = resumed.run()
    assert more[0]["epoch"] == 2 and more[0]["lr"] == pytest.approx(2e-4 * 0.36)
    assert more[0]["step"] == 5

    write_loss_log(hist, tmp_path / "l.tsv")
    lines = (tmp_path / "l.tsv").read_text().splitlines()
    assert lines[0].split("\t") == list(LOSS_COLUMNS) and len(lines) == 5


def test_training_deterministic(corpus):
    cfg = TrainConfig(data=corpus, patch_size=16, epochs=1, batch_size=2, steps_per_epoch=3, seed=4)
    a = [r["total"] for r in Trainer(cfg).run()]
    b = [r["total"] for r in Trainer(cfg).run()]
    assert a == b


def test_nan_loss_aborts_with_step(corpus):
    t = Trainer(TrainConfig(data=corpus, patch_size=16, epochs=1, batch_size=2, steps_per_epoch=3))
    t.gen.out.weight.data[:] = np.nan
    with pytest.raises(TrainingError, match="step 1"):
        t.run()


def test_center_crop_warns(caplog):
    img = RgbImage(np.zeros((18, 23, 3), np.uint8))
    with caplog.at_level(logging.WARNING):
        out = center_crop4(img)
    assert out.data.shape == (16, 20, 3) and "cropping" in caplog.text
    same = RgbImage(np.zeros((16, 20, 3), np.uint8))
    assert center_crop4(same) is same


def test_restain_keep_l_copies_luminance():
    img = synth_image(STYLE_B, 32, 32, 1)
    gen = GeneratorNet(seed=0)
    rgb, lab = restain_image(gen, img, keep_l=True)
    assert np.array_equal(lab.L, rgb_to_lab(img).L)
    _, lab2 = restain_image(gen, img, keep_l=False)
    assert not np.array_equal(lab2.L, rgb_to_lab(img).L)
    assert rgb.data.shape == img.data.shape


def test_stability_self_distance_zero():
    img = synth_image(STYLE_A, 32, 32, 2)
    outs, dists = stability_experiment(GeneratorNet(seed=1), img)
    assert len(outs) == 5 and dists[2] == 0.0 and all(d >= 0 for d in dists)


def test_histograms_and_w1():
    rng = np.random.default_rng(0)
    plane = rng.uniform(0.2, 1.5, (64, 64))
    h = dye_histogram(plane)
    assert abs(h.sum() - 1) < 1e-9 and h.size == 64
    shifted = dye_histogram(plane + 0.5)
    assert abs(wasserstein1(h, shifted) - 0.5) <= 3 / 64
    assert wasserstein1(h, h) == 0
    with pytest.raises(ValueError):
        wasserstein1(h, h[:10])


def test_histogram_compare_same_image():
    img = synth_image(STYLE_A, 32, 32, 5)
    cmp = histogram_compare(img, img)
    assert isinstance(cmp, HistComparison)
    assert cmp.distance == {"H": 0.0, "E": 0.0}
    tsv = cmp.to_tsv().splitlines()
    assert tsv[0].startswith("bin_lo") and len(tsv) == 1 + 64 + 3


def test_decompose_shapes():
    s = decompose(synth_image(STYLE_A, 16, 12, 0))
    assert s.L.shape == s.H.shape == s.E.shape == (12, 16) and s.lab.shape == (3, 12, 16)
