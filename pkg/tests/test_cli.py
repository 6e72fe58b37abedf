import subprocess
import sys

import pytest
import yaml

from gebd import cli, config, data_io, evaluation

from conftest import SMALL_FLAGS, run_pipeline


def _run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    return root, run_pipeline(root)


class TestPipeline:
    def test_outputs(self, pipeline):
        root, files = pipeline
        names = {p.relative_to(root).as_posix() for p in files}
        for want in ["data/synth.yaml", "data/train/annotations.txt", "run/model.ckpt", "run/curve.txt",
                     "run/curve.png", "run/config.yaml", "run/checkpoints/epoch_02.ckpt",
                     "scores.txt", "detections.txt", "report.txt", "report.png"]:
            assert want in names
        assert len(list((root / "data/train/features").iterdir())) == 12
        assert len(list((root / "figs").iterdir())) == 4

    def test_report_is_parseable(self, pipeline):
        root, _ = pipeline
        header, line = (root / "report.txt").read_text().splitlines()
        assert header == evaluation.REPORT_HEADER
        rel, tp, npred, ngt, p, r, f1 = line.split()
        assert float(rel) == 0.05 and int(ngt) > 0 and 0 <= float(f1) <= 1

    def test_curve_lines(self, pipeline):
        root, _ = pipeline
        rows = [l.split() for l in (root / "run/curve.txt").read_text().splitlines()]
        assert [int(r[0]) for r in rows] == [0, 1, 2]
        assert [float(r[2]) for r in rows] == [1e-2, 1e-2, 1e-3]

    def test_saved_config_reloads(self, pipeline):
        root, _ = pipeline
        cfg = config.load(root / "run/config.yaml")
        assert cfg.training.epochs == 2 and cfg.model.C == 16

    def test_eval_prints_report(self, pipeline, capsys):
        root, _ = pipeline
        code, out, _ = _run(["eval", str(root / "detections.txt"), "--annotations",
                             str(root / "data/test/annotations.txt")], capsys)
        assert code == 0 and out == (root / "report.txt").read_text()

    def test_ensemble_of_identical_runs(self, pipeline, tmp_path):
        root, _ = pipeline
        s = str(root / "scores.txt")
        assert cli.main(["ensemble", s, s, s, "--out", str(tmp_path / "e.txt")]) == 0
        assert (tmp_path / "e.txt").read_bytes() == (root / "scores.txt").read_bytes()


class TestErrors:
    def test_empty_detections(self, tmp_path, capsys):
        (tmp_path / "d.txt").write_text("")
        (tmp_path / "a.txt").write_text("v 10.0 1 5.0 0\n")
        code, out, _ = _run(["eval", str(tmp_path / "d.txt"), "--annotations", str(tmp_path / "a.txt")], capsys)
        assert code == 0
        assert out.splitlines()[1].split()[-1] == "0.0"

    def test_unknown_config_key(self, tmp_path, capsys):
        (tmp_path / "c.yaml").write_text("model:\n  widht: 3\n")
        code, _, err = _run(["synth", "--config", str(tmp_path / "c.yaml"), "--out", str(tmp_path / "x")], capsys)
        assert code == 2
        assert err.strip() == "error: config: unknown config key 'model.widht'"
        assert not (tmp_path / "x").exists()

    def test_bad_value(self, tmp_path, capsys):
        code, _, err = _run(["synth", "--synth.T", "ten", "--out", str(tmp_path / "x")], capsys)
        assert code == 2 and "synth.T" in err

    def test_invalid_combination(self, tmp_path, capsys):
        code, _, err = _run(["members", "--model.C", "30", "--out", str(tmp_path / "x")], capsys)
        assert code == 2 and err.startswith("error: config:")

    def test_missing_input_leaves_nothing(self, tmp_path, capsys):
        code, _, err = _run(["train", "--out", str(tmp_path / "run"),
                             "--data.train_features", str(tmp_path / "nope")], capsys)
        assert code == 1 and err.startswith("error: ")
        assert len(err.strip().splitlines()) == 1
        assert not (tmp_path / "run").exists()

    def test_ensemble_mismatch(self, pipeline, tmp_path, capsys):
        root, _ = pipeline
        lines = (root / "scores.txt").read_text().splitlines()
        (tmp_path / "short.txt").write_text("\n".join(lines[:-1]) + "\n")
        code, _, err = _run(["ensemble", str(root / "scores.txt"), str(tmp_path / "short.txt"),
                             "--out", str(tmp_path / "e.txt")], capsys)
        assert code == 1 and "video set differs" in err
        assert not (tmp_path / "e.txt").exists()

    def test_malformed_feature_file(self, tmp_path, capsys):
        feats = tmp_path / "f"
        feats.mkdir()
        (feats / "a.txt").write_text("# gebd-features v1\nvideo_id a\nT 2\nC 2\nfps 1\nduration 2\n1 2 3\n")
        (tmp_path / "ann.txt").write_text("a 2.0 0\n")
        code, _, err = _run(["train", "--out", str(tmp_path / "run"), "--data.train_features", str(feats),
                             "--data.train_annotations", str(tmp_path / "ann.txt"), "--model.in_channels", "2"],
                            capsys)
        assert code == 1 and err.startswith("error: format:") and "expected 4 values" in err


class TestConfig:
    def test_every_field_has_a_flag(self):
        help_text = cli.build_parser()._subparsers._group_actions[0].choices["train"].format_help()
        for key, _ in config.iter_fields():
            assert f"--{key}" in help_text

    @pytest.mark.parametrize("cmd", ["synth", "train", "infer", "ensemble", "detect", "eval", "members"])
    def test_help(self, cmd, capsys):
        with pytest.raises(SystemExit) as e:
            cli.main([cmd, "--help"])
        assert e.value.code == 0
        assert "usage: gebd " + cmd in capsys.readouterr().out

    def test_flags_override_file(self, tmp_path):
        (tmp_path / "c.yaml").write_text("training:\n  epochs: 7\n  drop_epochs: [2]\nseed: 3\n")
        cfg = config.load(tmp_path / "c.yaml", {"training.epochs": "9", "eval.rel_dis": "0.05,0.1"})
        assert (cfg.training.epochs, cfg.training.drop_epochs, cfg.seed) == (9, [2], 3)
        assert cfg.eval.rel_dis == [0.05, 0.1]

    def test_dump_round_trip(self):
        cfg = config.from_dict({"model": {"C": 64}, "meta": {"modalities": "rgb+flow"}})
        assert config.from_dict(yaml.safe_load(config.dump(cfg))) == cfg

    def test_members(self, tmp_path, capsys):
        code, _, _ = _run(["members", "--synth.flow_C", "8", "--out", str(tmp_path / "m")], capsys)
        assert code == 0
        files = sorted((tmp_path / "m").iterdir())
        assert len(files) == 12
        rows = [config.load(f) for f in files]
        assert [(r.meta.modalities, r.meta.size, r.meta.category_prediction) for r in rows] == config.ENSEMBLE_ROWS
        assert [r.model.in_channels for r in rows[:2]] == [16, 24]

    def test_module_entry_point(self):
        out = subprocess.run([sys.executable, "-m", "gebd", "--help"], capture_output=True, text=True)
        assert out.returncode == 0 and "synth" in out.stdout


def test_synth_matches_library(tmp_path):
    assert cli.main(["-q", "synth", "--out", str(tmp_path / "d"), *SMALL_FLAGS]) == 0
    spec = config.RunConfig().synth
    spec.num_train, spec.num_test = 12, 4
    videos = data_io.synth_generate(spec.spec("test", 0))
    anns = data_io.load_annotations(tmp_path / "d/test/annotations.txt")
    assert anns == [v.annotation for v in videos]
