import csv
import json
import os

import numpy as np
import pytest

from artgan import trainer as tr
from artgan.cli import dispatch
from artgan.config import RunConfig
from artgan.errors import ConfigError
from conftest import write_png, write_shape_corpus

TINY_KEYS = {
    "resolution": 16, "batch_size": 4, "total_iterations": 4,
    "checkpoint_interval": 2, "fid_monitor_interval": 2,
    "fid_monitor_samples": 8, "dim_z": 8, "dim_w": 8, "mapping_layers": 2,
    "channel_base": 8, "channel_max": 8, "generate_count": 4,
    "kid_block_size": 4, "kid_num_blocks": 2, "seed": 11,
}


def write_config(path, **extra):
    values = dict(TINY_KEYS)
    values.update(extra)
    lines = ["# tiny run configuration"]
    for key, value in values.items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def tiny_checkpoint(tmp_path):
    cfg = tr.TrainConfig(resolution=16, batch_size=4, dim_z=8, dim_w=8,
                         mapping_layers=2, channel_base=8, channel_max=8,
                         fid_monitor_samples=4, seed=5)
    state = tr.init_train_state(cfg)
    path = tmp_path / "ckpt.bin"
    tr.save_checkpoint(state, cfg, path)
    return path


class TestRunConfig:
    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("bananas = 7\n")
        with pytest.raises(ConfigError):
            RunConfig.load(path)

    def test_type_checked(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("batch_size = many\n")
        with pytest.raises(ConfigError):
            RunConfig.load(path)

    def test_comments_and_blanks(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("# a comment\n\nseed = 9\n")
        assert RunConfig.load(path)["seed"] == 9

    def test_echo_reparses_to_same_values(self, tmp_path):
        cfg = RunConfig({"seed": 3, "augment_flip": True,
                         "learning_rate_g": 1e-3})
        path = tmp_path / "echo.cfg"
        path.write_text(cfg.echo())
        assert RunConfig.load(path).values == cfg.values

    def test_bool_parsing(self):
        cfg = RunConfig()
        cfg.set("augment_flip", "true")
        assert cfg["augment_flip"] is True
        with pytest.raises(ConfigError):
            cfg.set("augment_flip", "maybe")


class TestDispatch:
    def test_unknown_flag_exits_one(self, capsys):
        assert dispatch(["--banana"]) == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_unknown_subcommand_exits_one(self, capsys):
        assert dispatch(["frobnicate"]) == 1

    def test_no_arguments_exits_one(self):
        assert dispatch([]) == 1

    def test_version(self, capsys):
        assert dispatch(["version"]) == 0
        assert "artgan" in capsys.readouterr().out

    def test_missing_checkpoint_file_exits_two(self, tmp_path):
        rc = dispatch(["generate", "--checkpoint", str(tmp_path / "none.bin"),
                       "--count", "2", "--seed", "1",
                       "--out", str(tmp_path / "g")])
        assert rc == 2

    def test_corrupt_checkpoint_exits_one(self, tmp_path):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"NOPE" + b"\x00" * 64)
        rc = dispatch(["generate", "--checkpoint", str(bad), "--count", "1",
                       "--out", str(tmp_path / "g")])
        assert rc == 1


class TestPreprocess:
    def test_counts_and_outputs(self, tmp_path, capsys):
        data = tmp_path / "data"
        write_shape_corpus(data, 5, seed=1, size=16)
        write_png(data / "gray.png", np.zeros((8, 8), np.uint8), mode="L")
        out = tmp_path / "pre"
        rc = dispatch(["preprocess", "--data-dir", str(data),
                       "--resolution", "16", "--out", str(out)])
        assert rc == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["counts"]["kept"] == 5
        assert manifest["counts"]["dropped_non_rgb"] == 1
        assert (out / "config.txt").exists()

    def test_missing_data_dir_flag(self, tmp_path):
        rc = dispatch(["preprocess", "--out", str(tmp_path / "o")])
        assert rc == 1


class TestGenerate:
    def test_writes_requested_pngs(self, tmp_path):
        ckpt = tiny_checkpoint(tmp_path)
        out = tmp_path / "samples"
        rc = dispatch(["generate", "--checkpoint", str(ckpt), "--count", "6",
                       "--seed", "7", "--out", str(out)])
        assert rc == 0
        pngs = sorted(p.name for p in out.glob("sample-*.png"))
        assert len(pngs) == 6
        assert (out / "config.txt").exists()

    def test_same_seed_same_bytes(self, tmp_path):
        ckpt = tiny_checkpoint(tmp_path)
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert dispatch(["generate", "--checkpoint", str(ckpt),
                             "--count", "2", "--seed", "9",
                             "--out", str(out)]) == 0
            outs.append((out / "sample-000.png").read_bytes())
        assert outs[0] == outs[1]


class TestEvaluate:
    def test_identical_feature_files(self, tmp_path):
        from artgan import metrics as met
        imgs = np.clip(np.random.default_rng(1).standard_normal((8, 3, 16, 16)),
                       -1, 1)
        feats = met.extract_features(imgs, "pool")
        fpath = tmp_path / "a.feat"
        met.save_features(feats, fpath)
        out = tmp_path / "eval" / "report.json"
        rc = dispatch(["evaluate", "--real", str(fpath), "--gen", str(fpath),
                       "--extractor", "file", "--kid-block", "8",
                       "--out", str(out)])
        assert rc == 0
        report = json.loads(out.read_text())
        assert report["fid"] < 1e-10
        assert (out.parent / "report.csv").exists()
        assert (out.parent / "report.png").exists()

    def test_directory_inputs(self, tmp_path):
        data = tmp_path / "imgs"
        write_shape_corpus(data, 6, seed=2, size=16)
        out = tmp_path / "r" / "report.json"
        rc = dispatch(["evaluate", "--real", str(data), "--gen", str(data),
                       "--extractor", "pool", "--resolution", "16",
                       "--kid-block", "6", "--out", str(out)])
        assert rc == 0
        assert json.loads(out.read_text())["fid"] < 1e-10

    def test_file_extractor_rejects_directory(self, tmp_path):
        data = tmp_path / "imgs"
        write_shape_corpus(data, 4, seed=3, size=16)
        rc = dispatch(["evaluate", "--real", str(data), "--gen", str(data),
                       "--extractor", "file",
                       "--out", str(tmp_path / "r.json")])
        assert rc == 1


class TestSurvey:
    def _write_responses(self, path, incomplete=False):
        rows = [["respondent_id", "image_id", "group", "interesting",
                 "inspiring", "innovative", "overall", "attribution"]]
        rng = np.random.default_rng(4)
        for r in range(4):
            for i in range(4):
                group = "real" if i < 2 else "generated"
                rows.append([f"r{r}", f"img{i}", group,
                             *[int(v) for v in rng.integers(1, 6, 4)],
                             "artist" if rng.random() < 0.4 else "computer"])
        if incomplete:
            rows.pop()
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(rows)

    def test_full_run(self, tmp_path, capsys):
        resp = tmp_path / "resp.csv"
        self._write_responses(resp)
        out = tmp_path / "svy" / "report.json"
        rc = dispatch(["survey", "--responses", str(resp), "--out", str(out)])
        assert rc == 0
        assert (out.parent / "report.csv").exists()
        assert (out.parent / "report.png").exists()
        assert "%" in capsys.readouterr().out

    def test_partial_requires_flag(self, tmp_path):
        resp = tmp_path / "resp.csv"
        self._write_responses(resp, incomplete=True)
        out = tmp_path / "report.json"
        assert dispatch(["survey", "--responses", str(resp),
                         "--out", str(out)]) == 1
        assert dispatch(["survey", "--responses", str(resp), "--out", str(out),
                         "--allow-partial"]) == 0


class TestPipeline:
    def test_empty_data_dir_exits_one(self, tmp_path):
        data = tmp_path / "void"
        data.mkdir()
        cfg = tmp_path / "run.cfg"
        write_config(cfg, data_dir=str(data))
        rc = dispatch(["pipeline", "--config", str(cfg),
                       "--out", str(tmp_path / "out")])
        assert rc == 1

    def test_completes_and_emits_report(self, tmp_path):
        data = tmp_path / "data"
        write_shape_corpus(data, 12, seed=5, size=16)
        cfg = tmp_path / "run.cfg"
        write_config(cfg, data_dir=str(data))
        out = tmp_path / "run"
        rc = dispatch(["pipeline", "--config", str(cfg), "--out", str(out)])
        assert rc == 0
        for artifact in ("report.json", "report.csv", "report.png",
                         "manifest.json", "config.txt", "training-curves.png"):
            assert (out / artifact).exists(), artifact
        assert (out / "samples" / "grid.png").exists()
        assert len(list((out / "samples").glob("sample-*.png"))) == 4
        assert len(list((out / "checkpoints").glob("ckpt-*.bin"))) >= 2

    def test_rerun_is_byte_identical(self, tmp_path):
        data = tmp_path / "data"
        write_shape_corpus(data, 8, seed=6, size=16)
        cfg = tmp_path / "run.cfg"
        write_config(cfg, data_dir=str(data), total_iterations=2)
        blobs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            assert dispatch(["pipeline", "--config", str(cfg),
                             "--out", str(out)]) == 0
            blobs.append((
                (out / "report.json").read_bytes(),
                (out / "samples" / "sample-000.png").read_bytes(),
                (out / "samples" / "grid.png").read_bytes(),
            ))
        assert blobs[0] == blobs[1]

    def test_writes_only_under_out(self, tmp_path, monkeypatch):
        data = tmp_path / "data"
        write_shape_corpus(data, 8, seed=7, size=16)
        cfg = tmp_path / "run.cfg"
        write_config(cfg, data_dir=str(data), total_iterations=2)
        workdir = tmp_path / "cwd"
        workdir.mkdir()
        monkeypatch.chdir(workdir)
        out = tmp_path / "run"
        assert dispatch(["pipeline", "--config", str(cfg),
                         "--out", str(out)]) == 0
        assert list(workdir.iterdir()) == []

    def test_rerun_from_echoed_config(self, tmp_path):
        data = tmp_path / "data"
        write_shape_corpus(data, 8, seed=8, size=16)
        cfg = tmp_path / "run.cfg"
        write_config(cfg, data_dir=str(data), total_iterations=2)
        first = tmp_path / "first"
        assert dispatch(["pipeline", "--config", str(cfg),
                         "--out", str(first)]) == 0
        second = tmp_path / "second"
        assert dispatch(["pipeline", "--config", str(first / "config.txt"),
                         "--out", str(second)]) == 0
        assert (first / "report.json").read_bytes() \
            == (second / "report.json").read_bytes()
