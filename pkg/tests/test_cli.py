import csv
import os

import numpy as np
import pytest

from helpers import read_bytes, tiny_dataset
from sttraj.cli import build_config, main, make_parser
from sttraj.data import load_scene
from sttraj.synth import KINDS, synth_scene, write_synthetic

TRAIN_FLAGS = ["--profile", "desk", "--epochs", "2", "--lr-switch-epoch", "1", "--batch-size", "4",
               "--d-model", "8", "--heads", "2"]


def tracks(scene):
    out = {}
    for f, p, x, y in scene.records:
        out.setdefault(p, []).append((f, x, y))
    return out


class TestSynth:
    def test_linear_constant_displacement(self):
        for p, rows in tracks(synth_scene("linear", 0)).items():
            xy = np.array([r[1:] for r in rows])
            steps = np.diff(xy, axis=0)
            np.testing.assert_allclose(steps, np.broadcast_to(steps[0], steps.shape), atol=1e-9)
            assert np.all(np.diff([r[0] for r in rows]) == 10)

    def test_crossing_pairs_meet(self):
        tr = tracks(synth_scene("crossing", 0))
        for a in range(0, len(tr), 2):
            pa, pb = np.array([r[1:] for r in tr[a]]), np.array([r[1:] for r in tr[a + 1]])
            assert [r[0] for r in tr[a]] == [r[0] for r in tr[a + 1]]
            np.testing.assert_allclose(pa[10], pb[10], atol=1e-12)
            assert np.linalg.norm(pa[0] - pb[0]) > 0.1

    def test_group_shares_velocity(self):
        tr = tracks(synth_scene("group", 0))
        v = [tuple(np.round(np.diff(np.array([r[1:] for r in rows]), axis=0)[0], 9)) for rows in tr.values()]
        assert len(set(v)) < len(v)

    @pytest.mark.parametrize("kind", KINDS)
    def test_files_reload(self, tmp_path, kind):
        paths = write_synthetic(str(tmp_path), kind, 2, seed=3)
        assert [os.path.basename(p) for p in paths] == [f"{kind}0.txt", f"{kind}1.txt"]
        assert load_scene(paths[1]) == synth_scene(kind, 1, seed=3)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            synth_scene("spiral", 0)

    def test_deterministic(self):
        assert synth_scene("linear", 2, 7) == synth_scene("linear", 2, 7)
        assert synth_scene("linear", 2, 7) != synth_scene("linear", 2, 8)


@pytest.fixture
def dataset(tmp_path):
    d = str(tmp_path / "data")
    tiny_dataset(d)
    return d


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


class TestConfigPrecedence:
    def test_flags_override_file_override_profile(self, tmp_path):
        cfg_file = tmp_path / "c.cfg"
        cfg_file.write_text("profile=desk\nepochs=17\nalpha=0.5\n")
        args = make_parser().parse_args(["train", "--config", str(cfg_file), "--alpha", "0.1"])
        cfg = build_config(args)
        assert (cfg.profile, cfg.epochs, cfg.alpha, cfg.batch_size) == ("desk", 17, 0.1, 16)

    def test_default_profile_is_full_protocol(self):
        cfg = build_config(make_parser().parse_args(["train"]))
        assert cfg.epochs == 250 and cfg.batch_size == 128


class TestCommands:
    def test_train_eval_sample(self, dataset, tmp_path, capsys):
        out = str(tmp_path / "run")
        code, text, _ = run(["train", "--dataset-dir", dataset, "--test-scene", "gamma", "--out", out] + TRAIN_FLAGS,
                            capsys)
        assert code == 0 and text.count("epoch") == 2
        ckpt = os.path.join(out, "final.sttc")
        code, text, _ = run(["eval", "--checkpoint", ckpt, "--dataset-dir", dataset, "--test-scene", "gamma",
                             "--out", out], capsys)
        assert code == 0 and "gamma" in text
        rows = list(csv.reader(open(os.path.join(out, "metrics.csv"))))
        assert rows[0] == ["scene", "ade", "fde", "var_ade"] and [r[0] for r in rows[1:]] == ["gamma", "AVG", "Var"]
        code, text, _ = run(["sample", "--checkpoint", ckpt, "--dataset-dir", dataset, "--scene", "gamma",
                             "--window-index", "1", "--k", "3", "--out", out], capsys)
        assert code == 0
        assert os.path.exists(os.path.join(out, "samples_gamma_1.csv"))

    def test_repeatable(self, dataset, tmp_path, capsys):
        outs = [str(tmp_path / f"r{i}") for i in range(2)]
        for o in outs:
            assert run(["train", "--dataset-dir", dataset, "--out", o] + TRAIN_FLAGS, capsys)[0] == 0
            assert run(["eval", "--checkpoint", os.path.join(o, "final.sttc"), "--dataset-dir", dataset,
                        "--out", o], capsys)[0] == 0
        for name in ("train_log.csv", "final.sttc", "metrics.csv"):
            assert read_bytes(os.path.join(outs[0], name)) == read_bytes(os.path.join(outs[1], name))

    def test_resume_flag(self, dataset, tmp_path, capsys):
        out = str(tmp_path / "run")
        run(["train", "--dataset-dir", dataset, "--out", out] + TRAIN_FLAGS, capsys)
        code, text, _ = run(["train", "--dataset-dir", dataset, "--out", out, "--resume",
                             os.path.join(out, "last.sttc")] + TRAIN_FLAGS[:2] + ["--epochs", "3"] + TRAIN_FLAGS[4:],
                            capsys)
        assert code == 0 and text.count("epoch") == 1

    def test_variant_mismatch(self, dataset, tmp_path, capsys):
        out = str(tmp_path / "run")
        run(["train", "--dataset-dir", dataset, "--out", out] + TRAIN_FLAGS, capsys)
        code, _, err = run(["eval", "--checkpoint", os.path.join(out, "final.sttc"), "--dataset-dir", dataset,
                            "--variant", "T"], capsys)
        assert code == 2 and "variant" in err

    def test_unknown_test_scene(self, dataset, capsys):
        code, _, err = run(["train", "--dataset-dir", dataset, "--test-scene", "FOO"] + TRAIN_FLAGS, capsys)
        assert code == 2 and "FOO" in err

    def test_missing_dataset_dir(self, tmp_path, capsys):
        code, _, err = run(["train", "--dataset-dir", str(tmp_path / "nope")] + TRAIN_FLAGS, capsys)
        assert code == 2

    def test_sample_out_of_range(self, dataset, tmp_path, capsys):
        out = str(tmp_path / "run")
        run(["train", "--dataset-dir", dataset, "--out", out] + TRAIN_FLAGS, capsys)
        code, _, err = run(["sample", "--checkpoint", os.path.join(out, "final.sttc"), "--dataset-dir", dataset,
                            "--scene", "alpha", "--window-index", "500"], capsys)
        assert code == 2 and "out of range" in err

    def test_ablate_alpha_rows(self, dataset, tmp_path, capsys):
        out = str(tmp_path / "abl")
        code, _, _ = run(["ablate", "--axis", "alpha", "--values", "0", "0.1", "0.3", "0.5", "--dataset-dir",
                          dataset, "--test-scene", "alpha", "--out", out] + TRAIN_FLAGS, capsys)
        assert code == 0
        rows = list(csv.reader(open(os.path.join(out, "ablation_alpha.csv"))))
        assert rows[0][:3] == ["value", "alpha_ade", "alpha_fde"]
        assert [r[0] for r in rows[1:]] == ["0", "0.1", "0.3", "0.5"]

    def test_ablate_empty_values(self, dataset, capsys):
        with pytest.raises(SystemExit):
            main(["ablate", "--axis", "variant", "--dataset-dir", dataset])

    def test_ablate_bad_variant(self, dataset, capsys):
        code, _, err = run(["ablate", "--axis", "variant", "--values", "Q", "--dataset-dir", dataset], capsys)
        assert code == 2

    def test_synth_command(self, tmp_path, capsys):
        code, text, _ = run(["synth", "--kind", "crossing", "--n-scenes", "2", "--out", str(tmp_path)], capsys)
        assert code == 0 and len(text.split()) == 2
