import json

import numpy as np
import pytest

from gsgn.cli import main
from gsgn.data import load_image, save_image


def run(argv):
    return main([str(a) for a in argv])


class TestSynthData:
    def test_writes_layout_and_manifest(self, tmp_path):
        out = tmp_path / "ds"
        assert run(["synth-data", "--out", out, "--images", "5",
                    "--seed", "3"]) == 0
        assert (out / "source").is_dir()
        assert (out / "warm").is_dir()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 3
        assert len(list((out / "source").glob("*.png"))) == 5

    def test_idempotent(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run(["synth-data", "--out", a, "--images", "3", "--seed", "1"])
        run(["synth-data", "--out", b, "--images", "3", "--seed", "1"])
        for p in sorted(a.rglob("*.png")):
            q = b / p.relative_to(a)
            assert p.read_bytes() == q.read_bytes()


class TestTrainEval:
    def test_train_then_eval(self, toy_dataset_dir, tmp_path):
        out = tmp_path / "run"
        rc = run(["train", "--mode", "supervised-single",
                  "--data", toy_dataset_dir, "--task", "warm",
                  "--out", out, "--iterations", "2", "--batch-size", "4",
                  "--seed", "5"])
        assert rc == 0
        assert (out / "final.gsgn").exists()
        assert (out / "train_log.jsonl").exists()

        ev = tmp_path / "eval"
        rc = run(["eval", "--checkpoint", out / "final.gsgn",
                  "--data", toy_dataset_dir, "--split", "test",
                  "--out", ev])
        assert rc == 0
        summary = json.loads((ev / "summary_test.json").read_text())
        rows = summary["rows"]
        assert rows[-1]["task"] == "average"
        per_task = [r["psnr_db"] for r in rows[:-1]]
        assert rows[-1]["psnr_db"] == pytest.approx(np.mean(per_task))
        assert all(r["lpips"] is None for r in rows)

    def test_eval_idempotent(self, toy_dataset_dir,
                             toy_multitask_checkpoint, tmp_path):
        e1, e2 = tmp_path / "e1", tmp_path / "e2"
        for e in (e1, e2):
            assert run(["eval", "--checkpoint", toy_multitask_checkpoint,
                        "--data", toy_dataset_dir, "--split", "val",
                        "--out", e]) == 0
        assert ((e1 / "summary_val.csv").read_bytes()
                == (e2 / "summary_val.csv").read_bytes())

    def test_eval_targets_against_themselves(self, toy_dataset_dir,
                                             tmp_path):
        # identity checkpoint on the identity "task": outputs equal inputs
        from gsgn.checkpoint import Checkpoint, save_checkpoint
        from gsgn.models import GSGN, desk_config
        import numpy as np
        cfg = desk_config(zero_init_output=True)
        model = GSGN(cfg, np.random.default_rng(0))
        tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
        ck_path = tmp_path / "identity.gsgn"
        save_checkpoint(Checkpoint(cfg, ["warm", "cool", "bright"],
                                   tensors, {}), ck_path)
        # dataset whose targets equal sources
        src = toy_dataset_dir
        import shutil
        root = tmp_path / "selfdata"
        shutil.copytree(src, root)
        for task in ("warm", "cool", "bright"):
            shutil.rmtree(root / task)
            shutil.copytree(root / "source", root / task)
        ev = tmp_path / "ev"
        assert run(["eval", "--checkpoint", ck_path, "--data", root,
                    "--split", "test", "--out", ev]) == 0
        rows = json.loads((ev / "summary_test.json").read_text())["rows"]
        for r in rows:
            assert r["psnr_db"] == pytest.approx(100.0)
            assert r["ssim"] == pytest.approx(1.0)


class TestEnhance:
    def test_named_style_and_reference(self, toy_multitask_checkpoint,
                                       tmp_path, capsys):
        img = np.random.default_rng(0).uniform(
            0, 1, (3, 40, 64)).astype(np.float32)
        src = tmp_path / "in.png"
        save_image(src, img)
        out = tmp_path / "out.png"
        rc = run(["enhance", "--checkpoint", toy_multitask_checkpoint,
                  "--input", src, "--style", "cool", "--output", out,
                  "--reference", src, "--edge", "64"])
        assert rc == 0
        produced = load_image(out)
        assert produced.shape == (3, 40, 64)
        assert "PSNR vs reference" in capsys.readouterr().out

    def test_weight_vector_style(self, toy_multitask_checkpoint, tmp_path):
        img = np.random.default_rng(1).uniform(
            0, 1, (3, 32, 32)).astype(np.float32)
        src = tmp_path / "in.png"
        save_image(src, img)
        out = tmp_path / "out.png"
        assert run(["enhance", "--checkpoint", toy_multitask_checkpoint,
                    "--input", src, "--style", "0.5,0.5,0",
                    "--output", out, "--edge", "64"]) == 0
        assert out.exists()

    def test_unknown_style_fails(self, toy_multitask_checkpoint, tmp_path):
        img = np.zeros((3, 16, 16), dtype=np.float32)
        src = tmp_path / "in.png"
        save_image(src, img)
        rc = run(["enhance", "--checkpoint", toy_multitask_checkpoint,
                  "--input", src, "--style", "nosuch",
                  "--output", tmp_path / "o.png", "--edge", "64"])
        assert rc == 1

    def test_identity_checkpoint_returns_resized_input(self, tmp_path):
        from gsgn.checkpoint import Checkpoint, save_checkpoint
        from gsgn.models import GSGN, desk_config
        cfg = desk_config(zero_init_output=True)
        model = GSGN(cfg, np.random.default_rng(0))
        tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
        ck = tmp_path / "id.gsgn"
        save_checkpoint(Checkpoint(cfg, ["warm"], tensors, {}), ck)
        img = np.random.default_rng(2).uniform(
            0, 1, (3, 64, 64)).astype(np.float32)
        src = tmp_path / "in.png"
        save_image(src, img)
        out = tmp_path / "out.png"
        assert run(["enhance", "--checkpoint", ck, "--input", src,
                    "--output", out, "--edge", "64"]) == 0
        assert np.array_equal(load_image(out), load_image(src))

    def test_bad_edge_fails(self, toy_multitask_checkpoint, tmp_path):
        img = np.zeros((3, 16, 16), dtype=np.float32)
        src = tmp_path / "in.png"
        save_image(src, img)
        rc = run(["enhance", "--checkpoint", toy_multitask_checkpoint,
                  "--input", src, "--style", "warm",
                  "--output", tmp_path / "o.png", "--edge", "66"])
        assert rc == 1


class TestInterpolate:
    def test_endpoints_match_pure_styles(self, toy_multitask_checkpoint,
                                         tmp_path):
        img = np.random.default_rng(3).uniform(
            0, 1, (3, 32, 32)).astype(np.float32)
        src = tmp_path / "in.png"
        save_image(src, img)
        sweep = tmp_path / "sweep"
        assert run(["interpolate", "--checkpoint",
                    toy_multitask_checkpoint, "--input", src,
                    "--from", "warm", "--to", "bright", "--steps", "2",
                    "--out-dir", sweep, "--edge", "32"]) == 0
        a = tmp_path / "a.png"
        b = tmp_path / "b.png"
        run(["enhance", "--checkpoint", toy_multitask_checkpoint,
             "--input", src, "--style", "warm", "--output", a,
             "--edge", "32"])
        run(["enhance", "--checkpoint", toy_multitask_checkpoint,
             "--input", src, "--style", "bright", "--output", b,
             "--edge", "32"])
        assert (sweep / "frame_000.png").read_bytes() == a.read_bytes()
        assert (sweep / "frame_001.png").read_bytes() == b.read_bytes()

    def test_five_frames_and_sheet(self, toy_multitask_checkpoint,
                                   tmp_path):
        img = np.random.default_rng(4).uniform(
            0, 1, (3, 32, 32)).astype(np.float32)
        src = tmp_path / "in.png"
        save_image(src, img)
        sweep = tmp_path / "sweep5"
        assert run(["interpolate", "--checkpoint",
                    toy_multitask_checkpoint, "--input", src,
                    "--from", "warm", "--to", "cool", "--steps", "5",
                    "--out-dir", sweep, "--edge", "32"]) == 0
        assert len(list(sweep.glob("frame_*.png"))) == 5
        sheet = load_image(sweep / "contact_sheet.png")
        assert sheet.shape == (3, 32, 160)

    def test_adjacent_frame_difference_shrinks_with_steps(
            self, toy_multitask_checkpoint, tmp_path):
        img = np.random.default_rng(5).uniform(
            0, 1, (3, 32, 32)).astype(np.float32)
        src = tmp_path / "in.png"
        save_image(src, img)

        def mean_adjacent_diff(steps):
            d = tmp_path / f"sweep{steps}"
            assert run(["interpolate", "--checkpoint",
                        toy_multitask_checkpoint, "--input", src,
                        "--from", "warm", "--to", "bright",
                        "--steps", steps, "--out-dir", d,
                        "--edge", "32"]) == 0
            frames = [load_image(d / f"frame_{i:03d}.png")
                      for i in range(steps)]
            return np.mean([np.abs(frames[i + 1] - frames[i]).mean()
                            for i in range(steps - 1)])

        coarse = mean_adjacent_diff(3)
        fine = mean_adjacent_diff(9)
        assert coarse > 0
        assert fine < coarse

    def test_steps_below_two_fails(self, toy_multitask_checkpoint,
                                   tmp_path):
        rc = run(["interpolate", "--checkpoint", toy_multitask_checkpoint,
                  "--input", "none.png", "--from", "warm", "--to", "cool",
                  "--steps", "1", "--out-dir", tmp_path / "x"])
        assert rc == 1


class TestInspect:
    def test_reports_hash_and_counts(self, toy_multitask_checkpoint,
                                     capsys):
        assert run(["inspect-checkpoint", "--checkpoint",
                    toy_multitask_checkpoint]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["tasks"] == ["warm", "cool", "bright"]
        assert len(payload["content_hash"]) == 16
        assert payload["model_parameters"] > 0


class TestErrorContracts:
    def test_unknown_flag_is_error(self):
        with pytest.raises(SystemExit) as e:
            run(["synth-data", "--out", "x", "--bogus", "1"])
        assert e.value.code != 0

    def test_missing_checkpoint_nonzero(self, tmp_path):
        rc = run(["inspect-checkpoint", "--checkpoint",
                  tmp_path / "missing.gsgn"])
        assert rc == 1
