"""Image IO, preprocessing, dataset generation, run config, and CLI contract."""

import numpy as np
import pytest
from PIL import Image

from lisaliency.cli import cli_main
from lisaliency.config import (RunConfig, load_run_config, parse_run_config,
                               write_sidecar)
from lisaliency.dataset import (CLASS_NAMES, generate_dataset, load_labeled_dir)
from lisaliency.errors import ConfigError, ImageFormatError
from lisaliency.imageio import load_image, load_map_csv, save_image, save_map_csv
from lisaliency.preprocess import PreprocessConfig, crop_to_input, preprocess


class TestImageIO:
    def test_white_pixel(self, tmp_path):
        path = tmp_path / "w.png"
        Image.new("RGB", (1, 1), (255, 255, 255)).save(path)
        np.testing.assert_array_equal(load_image(path),
                                      np.ones((3, 1, 1), dtype=np.float32))

    def test_black_pixel(self, tmp_path):
        path = tmp_path / "b.png"
        Image.new("RGB", (1, 1), (0, 0, 0)).save(path)
        np.testing.assert_array_equal(load_image(path),
                                      np.zeros((3, 1, 1), dtype=np.float32))

    def test_roundtrip_quantization_bound(self, tmp_path, rng):
        img = rng.uniform(0, 1, (3, 9, 7)).astype(np.float32)
        path = tmp_path / "r.png"
        save_image(path, img)
        back = load_image(path)
        assert np.abs(back - img).max() <= 1.0 / 255.0 + 1e-7

    def test_ppm_supported(self, tmp_path, rng):
        img = (rng.uniform(0, 1, (5, 4, 3)) * 255).astype(np.uint8)
        path = tmp_path / "img.ppm"
        Image.fromarray(img, mode="RGB").save(path, format="PPM")
        loaded = load_image(path)
        assert loaded.shape == (3, 5, 4)

    def test_corrupt_file_structured_error(self, tmp_path):
        path = tmp_path / "bad.png"
        path.write_bytes(b"not an image at all")
        with pytest.raises(ImageFormatError):
            load_image(path)

    def test_non_rgb_rejected(self, tmp_path):
        path = tmp_path / "gray.png"
        Image.new("L", (4, 4), 128).save(path)
        with pytest.raises(ImageFormatError, match="mode"):
            load_image(path)

    def test_map_csv_roundtrip(self, tmp_path, rng):
        m = rng.uniform(0, 1, (6, 5)).astype(np.float32)
        path = tmp_path / "m.csv"
        save_map_csv(path, m)
        back = load_map_csv(path)
        np.testing.assert_allclose(back, m, atol=1e-6)


class TestPreprocess:
    def test_identity_when_already_target(self, rng):
        cfg = PreprocessConfig(target=(8, 8), mean=(0, 0, 0), std=(1, 1, 1),
                               resize_shorter=8)
        img = rng.uniform(0, 1, (3, 8, 8)).astype(np.float32)
        np.testing.assert_allclose(preprocess(img, cfg), img, atol=1e-6)

    def test_constant_image_with_matching_mean_zeroes(self):
        cfg = PreprocessConfig(target=(4, 4), mean=(0.3, 0.3, 0.3), std=(1, 1, 1),
                               resize_shorter=4)
        img = np.full((3, 4, 4), 0.3, dtype=np.float32)
        np.testing.assert_allclose(preprocess(img, cfg), 0.0, atol=1e-6)

    def test_shorter_edge_resize_arithmetic(self, rng):
        # 100x50 with shorter edge 64 resizes to 128x64, then center crop.
        cfg = PreprocessConfig(target=(64, 64), resize_shorter=64)
        img = rng.uniform(0, 1, (3, 100, 50)).astype(np.float32)
        cropped = crop_to_input(img, cfg)
        assert cropped.shape == (3, 64, 64)

        # Explicit intermediate: the crop removes (128-64)//2 = 32 rows on top.
        from lisaliency.saliency import resize_bilinear

        resized = np.stack([resize_bilinear(c, (128, 64)) for c in img])
        np.testing.assert_allclose(cropped, resized[:, 32:96, :], atol=1e-6)

    def test_std_must_be_positive(self):
        with pytest.raises(ConfigError):
            PreprocessConfig(std=(1.0, 0.0, 1.0))


class TestDatasetGeneration:
    def test_same_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        counts = {"train": 16, "test": 8, "adversarial": 8}
        generate_dataset(a, seed=5, counts=counts)
        generate_dataset(b, seed=5, counts=counts)
        files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    def test_labels_rows_match_images_and_balance(self, tmp_path):
        root = tmp_path / "d"
        generate_dataset(root, seed=9, counts={"train": 33, "test": 0,
                                               "adversarial": 0})
        samples = load_labeled_dir(root / "train")
        assert len(samples) == 33
        counts = np.bincount([s.label for s in samples], minlength=len(CLASS_NAMES))
        assert counts.max() - counts.min() <= 1

    def test_boxes_inside_image(self, tmp_path):
        root = tmp_path / "d"
        generate_dataset(root, seed=9, counts={"train": 16, "test": 0,
                                               "adversarial": 0})
        for s in load_labeled_dir(root / "train"):
            x, y, w, h = s.box
            assert 0 <= x and 0 <= y and w > 0 and h > 0
            assert x + w <= s.image.shape[2]
            assert y + h <= s.image.shape[1]


class TestRunConfig:
    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_run_config("li_q = 3\n")

    def test_roundtrip_values(self):
        cfg = parse_run_config("li_k = 3\nblur_radii = 1,2\ntap = before_softmax\n"
                               "spatial_layers_only = false\n")
        assert cfg.li_k == 3
        assert cfg.blur_radii == (1.0, 2.0)
        assert cfg.tap == "before_softmax"
        assert cfg.spatial_layers_only is False

    def test_reference_config_loads(self):
        cfg = load_run_config("configs/reference.cfg")
        assert cfg.li_params().k == 7
        assert cfg.mask_threshold == 0.1

    def test_bad_tap_rejected(self):
        with pytest.raises(ConfigError):
            parse_run_config("tap = sideways\n")

    def test_sidecar_written_and_parseable(self, tmp_path):
        artifact = tmp_path / "thing.csv"
        artifact.write_text("x\n")
        sidecar = write_sidecar(artifact, RunConfig(), seed=3)
        text = sidecar.read_text()
        assert "tool_version" in text
        assert "seed = 3" in text


class TestCli:
    def test_version_flag(self, capsys):
        assert cli_main(["--version"]) == 0
        out = capsys.readouterr().out
        assert "lisaliency 0.1.0" in out
        assert "config schema 1" in out

    def test_missing_required_flag_exits_2(self, capsys):
        assert cli_main(["gen-data"]) == 2
        assert "usage" in capsys.readouterr().err.lower()

    def test_unknown_subcommand_exits_2(self, capsys):
        assert cli_main(["frobnicate"]) == 2

    def test_gen_data_classify_train_roundtrip(self, tmp_path, capsys):
        data = tmp_path / "data"
        rc = cli_main(["gen-data", "--out", str(data), "--seed", "3",
                       "--train", "16", "--test", "8", "--adversarial", "8"])
        assert rc == 0
        assert (data / "train" / "labels.csv").exists()
        assert (data / "dataset.meta").exists()

        weights = tmp_path / "w.lisw"
        rc = cli_main(["train", "--dataset", str(data / "train"),
                       "--spec", "configs/mini_vgg.spec", "--out", str(weights),
                       "--epochs", "1", "--batch", "8", "--lr", "0.001",
                       "--seed", "1"])
        assert rc == 0
        assert weights.exists()
        assert (tmp_path / "w.lisw.meta").exists()
        capsys.readouterr()

        image = data / "test" / "images" / "test_00000.png"
        rc = cli_main(["classify", "--image", str(image),
                       "--weights", str(weights),
                       "--spec", "configs/mini_vgg.spec"])
        assert rc == 0
        lines = [l for l in capsys.readouterr().out.splitlines() if l.strip()]
        assert len(lines) == 5
        rank, class_id, class_name, prob = lines[0].split(",")
        assert rank == "1"
        assert class_name in CLASS_NAMES
        assert 0.0 <= float(prob) <= 1.0

    def test_structured_error_exit_1(self, tmp_path, capsys):
        rc = cli_main(["classify", "--image", str(tmp_path / "missing.png"),
                       "--weights", str(tmp_path / "w"), "--spec",
                       "configs/mini_vgg.spec"])
        assert rc == 1
        assert "error:" in capsys.readouterr().err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliws")
    data = root / "data"
    generate_dataset(data, seed=11, counts={"train": 24, "test": 8,
                                            "adversarial": 0})
    weights = root / "w.lisw"
    rc = cli_main(["train", "--dataset", str(data / "train"),
                   "--spec", "configs/mini_vgg.spec", "--out", str(weights),
                   "--epochs", "1", "--batch", "8", "--lr", "0.002",
                   "--seed", "2"])
    assert rc == 0
    image = data / "test" / "images" / "test_00000.png"
    return root, data, weights, image


class TestCliMapAndExperimentCommands:
    """End-to-end CLI coverage for saliency, attention, sanity, and blur-exp."""

    def test_saliency_command(self, workspace, capsys):
        root, _, weights, image = workspace
        out_png, out_csv = root / "map.png", root / "map.csv"
        rc = cli_main(["saliency", "--image", str(image), "--weights", str(weights),
                       "--spec", "configs/mini_vgg.spec", "--tap", "before",
                       "--out", str(out_png), "--out-raw", str(out_csv)])
        assert rc == 0
        assert out_png.exists() and out_csv.exists()
        assert (root / "map.csv.meta").exists()
        from lisaliency.imageio import load_map_csv

        values = load_map_csv(out_csv)
        assert values.shape == (64, 64)
        assert "categories:" in capsys.readouterr().out

    def test_attention_command(self, workspace):
        root, _, weights, image = workspace
        out_csv = root / "att.csv"
        rc = cli_main(["attention", "--image", str(image), "--weights", str(weights),
                       "--spec", "configs/mini_vgg.spec", "--category", "1",
                       "--tap", "before", "--out-raw", str(out_csv)])
        assert rc == 0
        assert out_csv.exists()

    def test_sanity_command(self, workspace):
        root, _, weights, image = workspace
        out = root / "sanity.csv"
        rc = cli_main(["sanity", "--mode", "independent", "--image", str(image),
                       "--weights", str(weights), "--spec", "configs/mini_vgg.spec",
                       "--tap", "before", "--seeds", "1", "--out", str(out)])
        assert rc == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "stage,layer_name,seed,hog_pearson,spearman"
        assert len(lines) == 1 + 9  # header + stage 0 + 8 learnable layers

    def test_blur_exp_command(self, workspace):
        root, data, weights, _ = workspace
        out, flips = root / "report.csv", root / "flips.csv"
        rc = cli_main(["blur-exp", "--dataset", str(data / "test"),
                       "--weights", str(weights), "--spec", "configs/mini_vgg.spec",
                       "--tap", "before", "--radii", "1", "--threshold", "0.2",
                       "--out", str(out), "--flips", str(flips)])
        assert rc == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "variant,region,radius,top1,top5,n"
        assert len(lines) == 1 + 3  # original + bg/fg at one radius
        assert flips.read_text().startswith("image,radius,")
        assert (root / "report.csv.meta").exists()


def test_cli_li_flag_resolution():
    from lisaliency.cli import build_parser, _resolve

    args = build_parser().parse_args(
        ["saliency", "--image", "x.png", "--weights", "w", "--spec", "s",
         "--li-a", "0.2", "--li-b", "0.8", "--li-k", "5", "--tap", "before",
         "--li-source", "activation"])
    cfg = _resolve(args)
    assert (cfg.li_a, cfg.li_b, cfg.li_k) == (0.2, 0.8, 5)
    assert cfg.tap == "before_softmax"
    assert cfg.li_source == "activation"
    assert cfg.li_params().k == 5
