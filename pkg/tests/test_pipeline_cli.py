import json
from pathlib import Path

import numpy as np
import pytest

from semistereo import evalnet, matchnet
from semistereo.cli import main
from semistereo.imageio import read_pfm, write_pfm, write_pgm
from semistereo.pipeline import PipelineConfig, SynthConfig, run_pipeline
from semistereo.synth import SyntheticSceneSpec, gen_synthetic
from semistereo.tensornet import init_params, save_params
from semistereo.errors import ConfigError


def tree_digest(root: Path):
    import hashlib

    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


@pytest.fixture(scope="module")
def tiny_weights(tmp_path_factory):
    root = tmp_path_factory.mktemp("weights")
    matcher = init_params(matchnet.matching_net_spec(), matchnet.INPUT_SHAPE, seed=3)
    evaluator = init_params(evalnet.evaluation_net_spec(), evalnet.INPUT_SHAPE, seed=4)
    mpath = root / "matcher.ssnw"
    epath = root / "evaluator.ssnw"
    mpath.write_bytes(save_params(matcher))
    epath.write_bytes(save_params(evaluator))
    return mpath, epath


class TestRunPipeline:
    def test_byte_identical_reruns(self, tmp_path, tiny_weights):
        mpath, epath = tiny_weights
        synth = SynthConfig(width=112, height=112, ndisp=8, train_scenes=1, eval_scenes=1)
        digests = []
        for out in ("a", "b"):
            cfg = PipelineConfig(
                out_dir=str(tmp_path / out),
                synth=synth,
                seed=5,
                r_threshold=0.0,
                train=False,
                matcher_weights=str(mpath),
                evaluator_weights=str(epath),
            )
            reports, manifest = run_pipeline(cfg)
            digests.append(tree_digest(tmp_path / out))
            assert reports, "expected at least one evaluated scene"
        assert digests[0] == digests[1]

    def test_manifest_contents(self, tmp_path, tiny_weights):
        mpath, epath = tiny_weights
        cfg = PipelineConfig(
            out_dir=str(tmp_path / "m"),
            synth=SynthConfig(width=112, height=112, ndisp=8, train_scenes=1, eval_scenes=1),
            seed=6,
            r_threshold=0.0,
            train=False,
            matcher_weights=str(mpath),
            evaluator_weights=str(epath),
        )
        run_pipeline(cfg)
        manifest = json.loads((tmp_path / "m" / "manifest.json").read_text())
        assert manifest["weights"]["matcher"] == matchnet.matching_net_fingerprint()
        assert manifest["weights"]["evaluator"] == evalnet.evaluation_net_fingerprint()
        assert "config_hash" in manifest
        for rel in manifest["files"]:
            assert (tmp_path / "m" / rel).is_file()

    def test_missing_weights_without_training(self, tmp_path):
        cfg = PipelineConfig(out_dir=str(tmp_path / "x"), train=False)
        with pytest.raises(ConfigError, match="train"):
            run_pipeline(cfg)

    def test_nonexistent_path_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="exist"):
            PipelineConfig(out_dir=str(tmp_path), matcher_weights=str(tmp_path / "nope.ssnw"))


class TestCliBasics:
    def test_synth_writes_scene_layout(self, tmp_path, capsys):
        out = tmp_path / "scenes"
        assert main(["synth", "--scenes", "2", "--seed", "7", "--out", str(out)]) == 0
        dirs = sorted(p.name for p in out.iterdir())
        assert len(dirs) == 2
        for d in dirs:
            assert (out / d / "im0.pgm").is_file()
            assert (out / d / "im1.pgm").is_file()
            assert (out / d / "disp0GT.pfm").is_file()
            assert (out / d / "mask0nocc.pgm").is_file()
            assert (out / d / "calib.txt").is_file()

    def test_synth_reproducible(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["synth", "--scenes", "1", "--seed", "9", "--out", str(a)])
        main(["synth", "--scenes", "1", "--seed", "9", "--out", str(b)])
        assert tree_digest(a) == tree_digest(b)

    def test_eval_prints_csv(self, tmp_path, capsys):
        rec = gen_synthetic(SyntheticSceneSpec(width=64, height=64, ndisp=8, seed=1))
        gt_path = tmp_path / "gt.pfm"
        gt_path.write_bytes(write_pfm(rec.gt))
        assert main(["eval", "--gt", str(gt_path), "--pred", str(gt_path)]) == 0
        out = capsys.readouterr().out
        lines = out.strip().split("\n")
        assert lines[0] == "scene,bad1,bad2,mpe,rms,density,invalid_rate,auc"
        assert lines[1].startswith("scene,0.000000,0.000000")

    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["synth", "--bogus", "1", "--out", "/tmp/x"])
        assert exc.value.code == 2

    def test_runtime_failure_exits_1(self, tmp_path, capsys):
        missing = str(tmp_path / "missing.pfm")
        assert main(["eval", "--gt", missing, "--pred", missing]) == 1
        assert "error:" in capsys.readouterr().err

    def test_gradcheck_linear_path(self, capsys):
        # full gradcheck is exercised in acceptance; here only flag parsing
        with pytest.raises(SystemExit):
            main(["gradcheck", "--seed"])  # missing value -> usage error


class TestCliInferFilter:
    @pytest.fixture(scope="class")
    def scene_dir(self, tmp_path_factory):
        root = tmp_path_factory.mktemp("scene")
        rec = gen_synthetic(SyntheticSceneSpec(width=72, height=72, ndisp=6, seed=11))
        (root / "im0.pgm").write_bytes(write_pgm(rec.left))
        (root / "im1.pgm").write_bytes(write_pgm(rec.right))
        (root / "gt.pfm").write_bytes(write_pfm(rec.gt))
        return root

    def test_infer_and_filter_round_trip(self, scene_dir, tiny_weights, tmp_path):
        mpath, epath = tiny_weights
        raw_path = tmp_path / "raw.pfm"
        vol_path = tmp_path / "vol.bin"
        code = main(
            [
                "infer",
                "--left", str(scene_dir / "im0.pgm"),
                "--right", str(scene_dir / "im1.pgm"),
                "--ndisp", "6",
                "--matcher", str(mpath),
                "--rank-window", "5",
                "--companion-window", "5",
                "--out-disp", str(raw_path),
                "--out-volume", str(vol_path),
            ]
        )
        assert code == 0
        raw = read_pfm(raw_path.read_bytes())
        assert raw.data.shape == (72, 72)
        vol = matchnet.load_cost_volume(vol_path.read_bytes())
        assert vol.ndisp == 6

        # 72x72 is too small for 101-patches: filter keeps nothing but runs
        filt_path = tmp_path / "filtered.pfm"
        conf_path = tmp_path / "conf.pfm"
        code = main(
            [
                "filter",
                "--left", str(scene_dir / "im0.pgm"),
                "--raw", str(raw_path),
                "--ndisp", "6",
                "--evaluator", str(epath),
                "--r", "0.5",
                "--out", str(filt_path),
                "--out-conf", str(conf_path),
            ]
        )
        assert code == 0
        filt = read_pfm(filt_path.read_bytes())
        assert not filt.valid_mask().any()

    def test_infer_wrong_weights_exits_1(self, scene_dir, tiny_weights, tmp_path, capsys):
        _, epath = tiny_weights
        code = main(
            [
                "infer",
                "--left", str(scene_dir / "im0.pgm"),
                "--right", str(scene_dir / "im1.pgm"),
                "--ndisp", "6",
                "--matcher", str(epath),
                "--out-disp", str(tmp_path / "x.pfm"),
            ]
        )
        assert code == 1
        assert "IncompatibleArchitectureError" in capsys.readouterr().err


class TestConfigFile:
    def test_file_seeds_defaults_flags_override(self, tmp_path, capsys):
        rec = gen_synthetic(SyntheticSceneSpec(width=64, height=64, ndisp=8, seed=2))
        gt_path = tmp_path / "gt.pfm"
        gt_path.write_bytes(write_pfm(rec.gt))
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"gt = {gt_path}\npred = {gt_path}\nscene = from-file\n")
        assert main(["--config", str(cfg), "eval"]) == 0
        assert "from-file," in capsys.readouterr().out
        assert main(["--config", str(cfg), "eval", "--scene", "cli-wins"]) == 0
        assert "cli-wins," in capsys.readouterr().out

    def test_prepare_round_trip(self, tmp_path):
        src = tmp_path / "src"
        main(["synth", "--scenes", "1", "--seed", "3", "--width", "64", "--height", "64",
              "--ndisp", "8", "--out", str(src)])
        dst = tmp_path / "dst"
        assert main(["prepare", "--root", str(src), "--resolution", "half", "--out", str(dst)]) == 0
        scene = next(dst.iterdir())
        from semistereo.imageio import load_scene

        rec = load_scene(scene, "full")
        assert rec.left.width == 32
        assert rec.calib.ndisp == 4
