import numpy as np
import pytest

from futurescene import sceneio
from futurescene.cli import main
from futurescene.sceneio import load_bundle, load_output_manifest
from futurescene.synth import write_demo_bundle


@pytest.fixture(scope="module")
def demo_bundle(tmp_path_factory):
    return write_demo_bundle(tmp_path_factory.mktemp("bundle") / "demo")


class TestPoseCommand:
    def test_prints_solution(self, demo_bundle, tmp_path, capsys):
        overlay = tmp_path / "overlay.png"
        code = main(["pose", str(demo_bundle), "--vehicle", "3",
                     "--overlay", str(overlay)])
        out = capsys.readouterr().out
        assert code == 0
        kv = dict(line.split(" = ", 1) for line in out.strip().splitlines())
        assert float(kv["residual_px"]) < 1e-6
        assert kv["converged"] == "true"
        assert kv["approximate_intrinsics"] == "false"
        assert overlay.exists()

    def test_yaw_only_reports_zero_roll_pitch(self, demo_bundle, tmp_path,
                                              capsys):
        code = main(["pose", str(demo_bundle), "--vehicle", "3", "--yaw-only",
                     "--overlay", str(tmp_path / "o.png")])
        out = capsys.readouterr().out
        assert code == 0
        kv = dict(line.split(" = ", 1) for line in out.strip().splitlines())
        assert float(kv["roll_deg"]) == 0.0
        assert float(kv["pitch_deg"]) == 0.0

    def test_insufficient_keypoints_exit_code(self, demo_bundle, tmp_path,
                                              capsys):
        # keep only 3 keypoint rows for frame 0
        import csv
        bundle_copy = tmp_path / "bundle"
        import shutil
        shutil.copytree(demo_bundle, bundle_copy)
        rows = list(csv.reader(open(bundle_copy / "keypoints.csv")))
        with open(bundle_copy / "keypoints.csv", "w", newline="") as fh:
            csv.writer(fh).writerows(
                [r for r in rows if r and r[0] != "0"][:0]
                + [r for r in rows if r and r[0] == "0"][:3]
                + [r for r in rows if r and r[0] != "0"])
        code = main(["pose", str(bundle_copy), "--vehicle", "3",
                     "--overlay", str(tmp_path / "o.png")])
        err = capsys.readouterr().err
        assert code == 1
        assert "correspondences" in err


class TestBackgroundCommand:
    def test_writes_background_files(self, demo_bundle, tmp_path, capsys):
        out = tmp_path / "derived"
        code = main(["background", str(demo_bundle), "--out", str(out)])
        assert code == 0
        assert (out / "background.png").exists()
        assert (out / "background_valid.png").exists()
        stdout = capsys.readouterr().out
        assert "valid_fraction = 1.0" in stdout


class TestGenerateCommand:
    def test_stationary_clip(self, demo_bundle, tmp_path, capsys):
        out = tmp_path / "out"
        code = main([
            "generate", str(demo_bundle), "--out", str(out),
            "--trajectory", str(demo_bundle / "polyline_stationary.txt"),
            "--mode", "appearance",
        ])
        assert code == 0
        manifest = load_output_manifest(out / "clip_000")
        assert len(manifest.frames) == 5
        assert manifest.timestep == 0.2
        assert manifest.horizon == 1.0
        bg = sceneio.load_image(out / "background.png")
        frame0 = sceneio.load_image(demo_bundle / "frames"
                                    / "frame_000000.png")
        sil0 = np.any(frame0 != bg, axis=2)
        for ref in manifest.frames:
            frame = sceneio.load_image(out / "clip_000" / ref.path)
            sil = np.any(frame != bg, axis=2)
            iou = (sil & sil0).sum() / (sil | sil0).sum()
            assert iou >= 0.95

    def test_empty_vehicle_list_gives_background(self, demo_bundle, tmp_path):
        out = tmp_path / "out"
        code = main(["generate", str(demo_bundle), "--out", str(out),
                     "--vehicles", ""])
        assert code == 0
        manifest = load_output_manifest(out / "clip_000")
        assert len(manifest.frames) == 5
        bg = sceneio.load_image(out / "background.png")
        for ref in manifest.frames:
            frame = sceneio.load_image(out / "clip_000" / ref.path)
            assert np.array_equal(frame, bg)

    def test_three_polylines_three_clips(self, demo_bundle, tmp_path, capsys):
        out = tmp_path / "out"
        code = main([
            "generate", str(demo_bundle), "--out", str(out),
            "--trajectory", str(demo_bundle / "polylines_three_futures.txt"),
            "--mode", "normals",
        ])
        assert code == 0
        assert "clips = 3" in capsys.readouterr().out
        for n in range(3):
            manifest = load_output_manifest(out / f"clip_{n:03d}")
            assert len(manifest.frames) == 5

    def test_quarter_turn_yaw(self, demo_bundle, tmp_path):
        out = tmp_path / "out"
        code = main([
            "generate", str(demo_bundle), "--out", str(out),
            "--trajectory", str(demo_bundle / "polyline_quarter_turn.txt"),
            "--mode", "normals",
        ])
        assert code == 0
        manifest = load_output_manifest(out / "clip_000")
        assert abs(manifest.plans[0].yaw_delta_deg - 90.0) < 0.5

    def test_determinism(self, demo_bundle, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            assert main([
                "generate", str(demo_bundle), "--out", str(out),
                "--trajectory",
                str(demo_bundle / "polyline_quarter_turn.txt"),
            ]) == 0
        files1 = sorted(p.relative_to(out1) for p in out1.rglob("*")
                        if p.is_file())
        files2 = sorted(p.relative_to(out2) for p in out2.rglob("*")
                        if p.is_file())
        assert files1 == files2
        for rel in files1:
            assert (out1 / rel).read_bytes() == (out2 / rel).read_bytes(), rel

    def test_renders_persisted_with_depth_sidecars(self, demo_bundle,
                                                   tmp_path):
        from futurescene.render import load_render
        out = tmp_path / "out"
        assert main([
            "generate", str(demo_bundle), "--out", str(out),
            "--trajectory", str(demo_bundle / "polyline_stationary.txt"),
            "--mode", "normals",
        ]) == 0
        renders = sorted((out / "clip_000" / "renders").glob("*.png"))
        assert len(renders) == 5
        color, alpha, depth = load_render(str(renders[0])[:-4])
        assert (alpha > 0).any()
        assert np.isfinite(depth[alpha > 0]).all()

    def test_failed_vehicle_is_skipped_with_warning(self, demo_bundle,
                                                    tmp_path, caplog):
        import csv
        import logging
        import shutil
        bundle_copy = tmp_path / "bundle"
        shutil.copytree(demo_bundle, bundle_copy)
        rows = list(csv.reader(open(bundle_copy / "keypoints.csv")))
        keep = [r for r in rows if r and r[0] == "0"][:3]
        rest = [r for r in rows if r and r[0] != "0"]
        with open(bundle_copy / "keypoints.csv", "w", newline="") as fh:
            csv.writer(fh).writerows(keep + rest)
        out = tmp_path / "out"
        with caplog.at_level(logging.WARNING):
            code = main([
                "generate", str(bundle_copy), "--out", str(out),
                "--trajectory",
                str(bundle_copy / "polyline_stationary.txt"),
            ])
        assert code == 0
        assert any("skipped" in r.message for r in caplog.records)
        manifest = load_output_manifest(out / "clip_000")
        assert manifest.plans == ()
        bg = sceneio.load_image(out / "background.png")
        frame = sceneio.load_image(out / "clip_000" / "frame_000.png")
        assert np.array_equal(frame, bg)

    def test_export_crops(self, demo_bundle, tmp_path):
        out = tmp_path / "gen"
        assert main(["generate", str(demo_bundle), "--out", str(out),
                     "--mode", "normals", "--horizon", "0.4",
                     "--trajectory",
                     str(demo_bundle / "polyline_stationary.txt")]) == 0
        crops = tmp_path / "crops"
        assert main(["eval", str(out / "clip_000"), str(demo_bundle),
                     "--export-crops", str(crops)]) == 0
        assert (crops / "h1" / "target_v3.png").exists()
        assert (crops / "h1" / "pred_v3.png").exists()
        assert (crops / "h2" / "target_v3.png").exists()

    def test_config_file_overrides_defaults(self, demo_bundle, tmp_path):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("mode = normals\nhorizon = 0.4\n")
        out = tmp_path / "out"
        code = main([
            "generate", str(demo_bundle), "--out", str(out),
            "--config", str(cfg),
            "--trajectory", str(demo_bundle / "polyline_stationary.txt"),
        ])
        assert code == 0
        manifest = load_output_manifest(out / "clip_000")
        assert manifest.mode == "normals"
        assert len(manifest.frames) == 2


class TestEvalCommand:
    def _identity_clip(self, demo_bundle, out_dir):
        """A fake 'prediction' that is exactly the ground truth frames."""
        from futurescene.sceneio import (ClipFrameRef, OutputManifest,
                                         write_outputs)
        bundle = load_bundle(demo_bundle)
        frames = [bundle.load_frame(2 * (k + 1)) for k in range(4)]
        manifest = OutputManifest(
            clip_id="ident", base_frame=0, timestep=0.2, horizon=0.8,
            mode="appearance", tool_version="0.1.0", options_hash="0" * 12,
            approximate_intrinsics=False,
            frames=tuple(
                ClipFrameRef(path="", offset=0.2 * (k + 1),
                             frame_index=2 * (k + 1))
                for k in range(4)),
        )
        write_outputs(frames, manifest, out_dir)

    def test_perfect_prediction_scores(self, demo_bundle, tmp_path, capsys):
        clip = tmp_path / "clip"
        self._identity_clip(demo_bundle, clip)
        code = main(["eval", str(clip), str(demo_bundle)])
        out = capsys.readouterr().out
        assert code == 0
        kv = dict(line.split(" = ", 1) for line in out.strip().splitlines())
        assert float(kv["mse[+0.2s]"]) == 0.0
        assert abs(float(kv["ssim[+0.8s]"]) - 1.0) < 1e-9
        assert kv["fid[+0.2s]"] == "skipped"
        assert (clip / "report.csv").exists()
        assert (clip / "report.txt").exists()
        assert (clip / "metrics.png").exists()

    def test_eval_with_features(self, demo_bundle, tmp_path, capsys):
        from futurescene.metrics import write_feature_file
        clip = tmp_path / "clip"
        self._identity_clip(demo_bundle, clip)
        fdir = tmp_path / "features"
        fdir.mkdir()
        rng = np.random.default_rng(0)
        write_feature_file(fdir / "target_h1.feat",
                           rng.normal(size=(16, 8)).astype(np.float32))
        write_feature_file(fdir / "pred_h1.feat",
                           rng.normal(size=(16, 8)).astype(np.float32))
        raw = rng.uniform(0.01, 1.0, size=(16, 5))
        write_feature_file(fdir / "prob_h1.feat",
                           (raw / raw.sum(axis=1, keepdims=True)
                            ).astype(np.float32))
        code = main(["eval", str(clip), str(demo_bundle),
                     "--features-dir", str(fdir)])
        out = capsys.readouterr().out
        assert code == 0
        kv = dict(line.split(" = ", 1) for line in out.strip().splitlines())
        assert float(kv["fid[+0.2s]"]) > 0.0
        assert float(kv["is[+0.2s]"]) >= 1.0
        assert kv["fid[+0.4s]"] == "skipped"

    def test_eval_matches_direct_metric_calls(self, demo_bundle, tmp_path,
                                              capsys):
        from futurescene.metrics import CropPair, mse as mse_fn, ssim as ssim_fn
        clip = tmp_path / "clip"
        out = tmp_path / "gen"
        assert main(["generate", str(demo_bundle), "--out", str(out),
                     "--mode", "normals", "--horizon", "0.4",
                     "--trajectory",
                     str(demo_bundle / "polyline_stationary.txt")]) == 0
        code = main(["eval", str(out / "clip_000"), str(demo_bundle)])
        stdout = capsys.readouterr().out
        assert code == 0
        kv = dict(line.split(" = ", 1)
                  for line in stdout.strip().splitlines())
        bundle = load_bundle(demo_bundle)
        manifest = load_output_manifest(out / "clip_000")
        ref = manifest.frames[0]
        pred = sceneio.load_image(out / "clip_000" / ref.path)
        gt = bundle.load_frame(ref.frame_index)
        entry = bundle.tracks[3].entry_at(ref.frame_index)
        x, y, w, h = (int(v) for v in entry.bbox)
        pair = CropPair(gt[y:y + h, x:x + w], pred[y:y + h, x:x + w])
        assert float(kv["mse[+0.2s]"]) == pytest.approx(mse_fn(pair),
                                                        abs=1e-9)
        assert float(kv["ssim[+0.2s]"]) == pytest.approx(ssim_fn(pair),
                                                         abs=1e-9)
