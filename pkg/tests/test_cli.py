import hashlib

import numpy as np
import pytest

from restain import cli
from restain.baselines import lab_stats, save_lab_stats
from restain.colorspace import rgb_to_lab
from restain.imagecore import RgbImage, default_styles, load_png, save_png, synth_image
from restain.tensornet import GeneratorNet, save_checkpoint

STYLE_A, STYLE_B = default_styles(0)


def _digest(root):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture
def model(tmp_path):
    path = tmp_path / "gen.rsnm"
    save_checkpoint(path, GeneratorNet(seed=0))
    return path


def test_synth_counts_and_determinism(tmp_path, capsys):
    assert cli.main(["synth", "--out", str(tmp_path / "a"), "--count", "3", "--seed", "7", "--size", "32"]) == 0
    assert capsys.readouterr().out.strip().endswith("manifest.tsv")
    assert cli.main(["synth", "--out", str(tmp_path / "b"), "--count", "3", "--seed", "7", "--size", "32"]) == 0
    da, db = _digest(tmp_path / "a"), _digest(tmp_path / "b")
    assert da == db and len([k for k in da if k.endswith(".png")]) == 6
    assert len((tmp_path / "a" / "manifest.tsv").read_text().splitlines()) == 6


def test_usage_errors_exit_2(tmp_path, capsys):
    assert cli.main(["synth", "--out", str(tmp_path), "--count", "0"]) == 2
    assert cli.main(["train", "--data", str(tmp_path / "m.tsv"), "--epochs", "0"]) == 2
    assert cli.main(["histcmp", "a.png", "b.png", "--od-floor", "0"]) == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 2
    capsys.readouterr()


def test_runtime_failure_exit_1(tmp_path, caplog):
    assert cli.main(["stability", "--image", str(tmp_path / "none.png"), "--model", str(tmp_path / "x")]) == 1
    assert "Error" in caplog.text


def test_train_writes_log_figure_and_checkpoint(tmp_path, capsys):
    cli.main(["synth", "--out", str(tmp_path / "d"), "--count", "1", "--size", "32"])
    code = cli.main(["train", "--data", str(tmp_path / "d" / "manifest.tsv"), "--patch-size", "16",
                     "--epochs", "1", "--steps-per-epoch", "2", "--batch-size", "2", "--out", str(tmp_path / "run")])
    assert code == 0
    assert (tmp_path / "run" / "model.rsnm").exists()
    assert len((tmp_path / "run" / "losses.tsv").read_text().splitlines()) == 3
    assert (tmp_path / "run" / "losses.png").stat().st_size > 0
    capsys.readouterr()


def test_normalize_restain_keep_l_and_inputs_untouched(tmp_path, model, capsys):
    src = tmp_path / "in.png"
    img = synth_image(STYLE_B, 32, 32, 0)
    save_png(img, src)
    before = src.read_bytes()
    assert cli.main(["normalize", str(src), "--model", str(model), "--out", str(tmp_path / "o")]) == 0
    out = load_png(tmp_path / "o" / "in.png")
    assert src.read_bytes() == before
    # exact L equality is checked on the float Lab in test_pipeline; the saved PNG adds
    # 8-bit rounding and gamut clipping on top
    assert np.abs(rgb_to_lab(out).L - rgb_to_lab(img).L).mean() < 0.5
    assert cli.main(["normalize", str(src), "--model", str(model), "--out", str(tmp_path)]) == 2
    capsys.readouterr()


def test_normalize_crops_non_multiple_of_4(tmp_path, model, caplog):
    save_png(synth_image(STYLE_A, 30, 33, 1), tmp_path / "odd.png")
    assert cli.main(["normalize", str(tmp_path / "odd.png"), "--model", str(model),
                     "--out", str(tmp_path / "o")]) == 0
    assert load_png(tmp_path / "o" / "odd.png").data.shape == (32, 28, 3)
    assert "cropping" in caplog.text


def test_normalize_reinhard_self_target(tmp_path, capsys):
    img = synth_image(STYLE_A, 32, 32, 2)
    save_png(img, tmp_path / "x.png")
    save_lab_stats(lab_stats(img), tmp_path / "stats.tsv")
    assert cli.main(["normalize", str(tmp_path / "x.png"), "--method", "reinhard",
                     "--target-stats", str(tmp_path / "stats.tsv"), "--out", str(tmp_path / "o")]) == 0
    out = load_png(tmp_path / "o" / "x.png")
    assert np.abs(out.data.astype(int) - img.data.astype(int)).max() <= 1
    assert cli.main(["normalize", str(tmp_path / "x.png"), "--method", "reinhard"]) == 2
    capsys.readouterr()


def test_normalize_macenko(tmp_path, capsys):
    rng = np.random.default_rng(0)
    from restain.imagecore import compose_stained
    tgt = compose_stained(STYLE_A, rng.uniform(0, 1, (48, 48)), rng.uniform(0, 1, (48, 48)))
    save_png(tgt, tmp_path / "t.png")
    save_png(compose_stained(STYLE_A, rng.uniform(0, 1.4, (48, 48)), rng.uniform(0, 0.8, (48, 48))),
             tmp_path / "s.png")
    assert cli.main(["normalize", str(tmp_path / "s.png"), "--method", "macenko",
                     "--target-image", str(tmp_path / "t.png"), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "s.png").exists()
    capsys.readouterr()


def test_evaluate(tmp_path, capsys):
    a = synth_image(STYLE_A, 32, 32, 3)
    save_png(a, tmp_path / "a.png")
    save_png(synth_image(STYLE_B, 32, 32, 3), tmp_path / "b.png")
    (tmp_path / "pairs.tsv").write_text("a.png\ta.png\na.png\tb.png\n")
    assert cli.main(["evaluate", "--pairs", str(tmp_path / "pairs.tsv"), "--metrics", "mse,psnr"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "pair\tmse\tpsnr" and len(lines) == 1 + 2 + 1 + 2
    assert lines[1].split("\t")[1:] == ["0", "100"]
    assert cli.main(["evaluate", "--pairs", str(tmp_path / "pairs.tsv"), "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "report.tsv").exists() and (tmp_path / "r" / "report.png").exists()
    assert cli.main(["evaluate", "--pairs", str(tmp_path / "pairs.tsv"), "--metrics", "mse,fsim"]) == 2
    err = capsys.readouterr().err
    assert "fsim" in err and "ms_ssim" in err


def test_stability(tmp_path, model, capsys):
    save_png(synth_image(STYLE_B, 32, 32, 4), tmp_path / "x.png")
    assert cli.main(["stability", "--image", str(tmp_path / "x.png"), "--model", str(model),
                     "--out", str(tmp_path / "s")]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[0].startswith("coefficient") and len(rows) == 6
    assert rows[3].split("\t")[:2] == ["1", "0"]
    assert len(list((tmp_path / "s").glob("stability_c*.png"))) == 5


def test_histcmp(tmp_path, capsys):
    img = synth_image(STYLE_A, 32, 32, 5)
    save_png(img, tmp_path / "x.png")
    assert cli.main(["histcmp", str(tmp_path / "x.png"), str(tmp_path / "x.png"),
                     "--out", str(tmp_path / "h")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[-2:] == ["H\t0", "E\t0"]
    assert (tmp_path / "h" / "histcmp.png").exists()
    cols = np.array([[float(v) for v in line.split("\t")[2:]] for line in out[1:65]])
    assert np.allclose(cols.sum(axis=0), 1, atol=1e-4)


def test_custom_stain_matrix_flag(tmp_path, capsys):
    (tmp_path / "m.txt").write_text("1 0 0\n0 1 0\n0 0 1\n")
    img = RgbImage(np.full((8, 8, 3), 100, np.uint8))
    save_png(img, tmp_path / "x.png")
    assert cli.main(["histcmp", str(tmp_path / "x.png"), str(tmp_path / "x.png"),
                     "--stain-matrix", str(tmp_path / "m.txt"), "--od-i0", "250"]) == 0
    capsys.readouterr()
