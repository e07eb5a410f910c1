import json

import numpy as np
import pytest

from motok import fileio, metrics, synth
from motok.cli import dispatch
from motok.motion import FRAME_DIM, MotionSequence
from motok.scene import SceneVoxelGrid
from motok.vae import pad_frames, reconstruction_mse


def write_corpus(tmp_path, num=3, frames=48, seed=0):
    data_dir = tmp_path / "data"
    data_dir.mkdir()
    for i, seq in enumerate(synth.make_corpus(num, frames, seed=seed)):
        fileio.write_mseq(data_dir / f"seq{i:02d}.mseq", seq)
    return data_dir


def train_small_vae(tmp_path, data_dir):
    out = tmp_path / "params.vae"
    code = dispatch(["train-vae", "--data", str(data_dir), "--out", str(out),
                     "--vocab-size", "64", "--hidden-width", "8",
                     "--epochs", "30", "--learning-rate", "0.3", "--seed", "1"])
    assert code == 0
    return out


class TestUsageErrors:
    def test_unknown_flag_exits_2(self, capsys):
        assert dispatch(["convert", "--bogus"]) == 2
        capsys.readouterr()

    def test_unknown_subcommand_exits_2(self, capsys):
        assert dispatch(["frobnicate"]) == 2
        capsys.readouterr()

    def test_missing_input_file_exits_2(self, tmp_path, capsys):
        code = dispatch(["convert", "--to-canonical", "--in",
                         str(tmp_path / "nope.mseq"), "--out", str(tmp_path / "o.mseq")])
        assert code == 2
        assert "not found" in capsys.readouterr().err

    def test_help_exits_0(self, capsys):
        assert dispatch(["--help"]) == 0
        capsys.readouterr()

    def test_bad_thread_env_exits_2(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("MOTOK_THREADS", "many")
        code = dispatch(["score", "--motion", str(tmp_path / "x.mseq")])
        assert code == 2
        capsys.readouterr()


class TestConvert:
    def test_round_trip_through_files(self, tmp_path, rng):
        frames = np.zeros((9, FRAME_DIM))
        frames[:, 0:3] = rng.normal(size=(9, 3))
        frames[:, 4] = rng.uniform(-1, 1, size=9)
        seq = MotionSequence(frames, is_canonical=False)
        src = tmp_path / "global.mseq"
        fileio.write_mseq(src, seq)

        canon = tmp_path / "canon.mseq"
        assert dispatch(["convert", "--to-canonical", "--in", str(src),
                         "--out", str(canon)]) == 0
        canon_seq = fileio.read_mseq(canon)
        assert canon_seq.is_canonical
        np.testing.assert_allclose(canon_seq.frames[0, [0, 2]], 0.0, atol=1e-6)

        back = tmp_path / "back.mseq"
        x0, z0 = float(seq.frames[0, 0]), float(seq.frames[0, 2])
        yaw = float(seq.frames[0, 4])
        # --root-pose=<v> form: a leading minus sign confuses argparse otherwise
        assert dispatch(["convert", "--to-global", "--in", str(canon),
                         "--out", str(back),
                         f"--root-pose={x0},0,{z0},0,{yaw},0"]) == 0
        back_seq = fileio.read_mseq(back)
        np.testing.assert_allclose(back_seq.frames, seq.frames, atol=1e-5)

    def test_wrong_direction_is_domain_error(self, tmp_path, capsys):
        seq = MotionSequence(np.zeros((2, FRAME_DIM)), is_canonical=True)
        src = tmp_path / "c.mseq"
        fileio.write_mseq(src, seq)
        assert dispatch(["convert", "--to-canonical", "--in", str(src),
                         "--out", str(tmp_path / "o.mseq")]) == 1
        capsys.readouterr()


class TestTokenizeRoundTrip:
    def test_tokenize_detokenize_matches_vae_reconstruction(self, tmp_path):
        data_dir = write_corpus(tmp_path)
        vae_path = train_small_vae(tmp_path, data_dir)
        src = sorted(data_dir.glob("*.mseq"))[0]

        tok = tmp_path / "a.mtok"
        out = tmp_path / "a_back.mseq"
        assert dispatch(["tokenize", "--vae", str(vae_path), "--in", str(src),
                         "--out", str(tok)]) == 0
        assert dispatch(["detokenize", "--vae", str(vae_path), "--in", str(tok),
                         "--out", str(out)]) == 0

        source = fileio.read_mseq(src)
        decoded = fileio.read_mseq(out)
        assert decoded.num_frames == 8 * ((source.num_frames + 7) // 8)

        params = fileio.read_vae(vae_path)
        padded = pad_frames(source.frames)
        mse_files = float(((decoded.frames - padded) ** 2).mean())
        mse_direct = reconstruction_mse(params, source.frames)
        assert mse_files == pytest.approx(mse_direct, rel=1e-3, abs=1e-6)

    def test_vocab_mismatch_rejected(self, tmp_path, capsys):
        data_dir = write_corpus(tmp_path)
        vae_path = train_small_vae(tmp_path, data_dir)
        stream_path = tmp_path / "w.mtok"
        from motok.tokens import TokenStream
        fileio.write_mtok(stream_path, TokenStream(indices=np.array([0, 1]),
                                                   vocab_size=128))
        assert dispatch(["detokenize", "--vae", str(vae_path), "--in",
                         str(stream_path), "--out", str(tmp_path / "o.mseq")]) == 2
        capsys.readouterr()


class TestTrainVae:
    def test_writes_params_and_history(self, tmp_path):
        data_dir = write_corpus(tmp_path)
        out = tmp_path / "model"
        out.mkdir()
        vae_path = out / "params.vae"
        code = dispatch(["train-vae", "--data", str(data_dir), "--out", str(vae_path),
                         "--vocab-size", "16", "--hidden-width", "6",
                         "--epochs", "5", "--learning-rate", "0.1", "--seed", "0"])
        assert code == 0
        assert vae_path.exists()
        history = (out / "loss_history.csv").read_text().splitlines()
        assert history[0] == "epoch,recon,commit,entropy,total"
        assert len(history) == 6

    def test_config_file_with_flag_override(self, tmp_path):
        data_dir = write_corpus(tmp_path)
        cfg = tmp_path / "train.cfg"
        cfg.write_text("vocab_size = 16\nhidden_width = 6\nepochs = 4\n"
                       "learning_rate = 0.1\nseed = 3\n")
        out = tmp_path / "p.vae"
        assert dispatch(["train-vae", "--config", str(cfg), "--data", str(data_dir),
                         "--out", str(out), "--epochs", "2"]) == 0
        history = (tmp_path / "loss_history.csv").read_text().splitlines()
        assert len(history) == 3  # flag overrode the file's epoch count

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        data_dir = write_corpus(tmp_path)
        cfg = tmp_path / "train.cfg"
        cfg.write_text("optimizer = adam\n")
        assert dispatch(["train-vae", "--config", str(cfg), "--data", str(data_dir),
                         "--out", str(tmp_path / "p.vae")]) == 2
        assert "unknown config key" in capsys.readouterr().err


class TestSample:
    def test_writes_waypoint_track(self, tmp_path):
        out = tmp_path / "track.mseq"
        assert dispatch(["sample", "--steps", "20", "--seed", "5",
                         "--waypoints", "6", "--out", str(out)]) == 0
        seq = fileio.read_mseq(out)
        assert seq.num_frames == 6
        assert seq.fps == 1
        assert not seq.is_canonical
        assert np.any(seq.frames[:, 0:6] != 0)
        assert np.all(seq.frames[:, 6:69] == 0)

    def test_deterministic_per_seed(self, tmp_path):
        a, b, c = (tmp_path / n for n in ("a.mseq", "b.mseq", "c.mseq"))
        for path in (a, b):
            assert dispatch(["sample", "--seed", "9", "--out", str(path)]) == 0
        assert dispatch(["sample", "--seed", "10", "--out", str(c)]) == 0
        assert a.read_bytes() == b.read_bytes()
        assert a.read_bytes() != c.read_bytes()

    def test_heading_guidance_changes_track(self, tmp_path):
        plain = tmp_path / "p.mseq"
        guided = tmp_path / "g.mseq"
        assert dispatch(["sample", "--seed", "4", "--out", str(plain)]) == 0
        assert dispatch(["sample", "--seed", "4", "--heading", "1.2",
                         "--cfg-scale", "2.0", "--out", str(guided)]) == 0
        assert plain.read_bytes() != guided.read_bytes()

    def test_two_pass_runs(self, tmp_path):
        out = tmp_path / "tp.mseq"
        assert dispatch(["sample", "--seed", "2", "--two-pass", "--waypoints", "8",
                         "--out", str(out)]) == 0
        assert fileio.read_mseq(out).num_frames == 8


def make_room(tmp_path, nx=16, nz=16, ny=16, occupied=()):
    occ = np.zeros((nx, nz, ny), dtype=np.uint8)
    occ[0, :, :] = occ[-1, :, :] = 1
    occ[:, 0, :] = occ[:, -1, :] = 1
    for ix, iz in occupied:
        occ[ix, iz, :] = 1
    grid = SceneVoxelGrid(occ, np.zeros(3), 0.1)
    path = tmp_path / "scene.vox"
    fileio.write_vox(path, grid)
    return path


class TestPopulate:
    def test_feasible_placement(self, tmp_path):
        scene = make_room(tmp_path)
        motion_path = tmp_path / "walk.mseq"
        fileio.write_mseq(motion_path, synth.make_walk_sequence(num_frames=10,
                                                                speed=0.3,
                                                                arm_swing=0.0))
        out = tmp_path / "placed.mseq"
        report = tmp_path / "placement.json"
        code = dispatch(["populate", "--scene", str(scene), "--motion",
                         str(motion_path), "--out", str(out), "--report", str(report)])
        assert code == 0
        payload = json.loads(report.read_text())
        assert payload["feasible"] is True
        assert payload["collision"] == 0.0
        assert set(payload["offset"]) == {"x", "z", "yaw"}
        assert payload["candidates_evaluated"] > 16 * 16
        placed = fileio.read_mseq(out)
        assert not placed.is_canonical

    def test_scene_less_exit_code(self, tmp_path, capsys):
        occ = np.ones((4, 4, 4), dtype=np.uint8)
        scene = tmp_path / "full.vox"
        fileio.write_vox(scene, SceneVoxelGrid(occ, np.zeros(3), 0.1))
        motion_path = tmp_path / "walk.mseq"
        fileio.write_mseq(motion_path, synth.make_walk_sequence(num_frames=9))
        report = tmp_path / "placement.json"
        code = dispatch(["populate", "--scene", str(scene), "--motion",
                         str(motion_path), "--out", str(tmp_path / "p.mseq"),
                         "--report", str(report)])
        assert code == 1
        assert json.loads(report.read_text())["feasible"] is False
        capsys.readouterr()


class TestScoreAndEval:
    def test_score_scene_and_object(self, tmp_path, capsys):
        scene = make_room(tmp_path)
        seq = synth.make_walk_sequence(num_frames=9, speed=0.3, arm_swing=0.0,
                                       with_object=True)
        placed = MotionSequence(seq.frames + np.r_[[0.8, 0, 0.8], np.zeros(72)],
                                fps=seq.fps, is_canonical=False)
        motion_path = tmp_path / "m.mseq"
        fileio.write_mseq(motion_path, placed)
        pts = tmp_path / "o.pts"
        fileio.write_pts(pts, np.random.default_rng(0).uniform(-0.1, 0.1, (64, 3)))
        report = tmp_path / "score.json"
        code = dispatch(["score", "--scene", str(scene), "--motion", str(motion_path),
                         "--object", str(pts), "--report", str(report)])
        assert code == 0
        payload = json.loads(report.read_text())
        for key in ("collision", "collision_scene", "contact"):
            assert key in payload
        capsys.readouterr()

    def test_score_requires_scene_or_object(self, tmp_path, capsys):
        motion_path = tmp_path / "m.mseq"
        fileio.write_mseq(motion_path, synth.make_corpus(1, 16, seed=1)[0])
        assert dispatch(["score", "--motion", str(motion_path)]) == 2
        capsys.readouterr()

    def test_eval_report_keys(self, tmp_path, rng):
        real = rng.normal(size=(64, 12))
        gen = rng.normal(size=(64, 12)) * 1.2 + 0.1
        text = gen + rng.normal(0, 0.5, size=(64, 12))
        for name, feats in (("real", real), ("gen", gen), ("text", text)):
            fileio.write_feat(tmp_path / f"{name}.feat", feats)
        report = tmp_path / "report.json"
        code = dispatch(["eval", "--real", str(tmp_path / "real.feat"),
                         "--gen", str(tmp_path / "gen.feat"),
                         "--text", str(tmp_path / "text.feat"),
                         "--report", str(report)])
        assert code == 0
        payload = json.loads(report.read_text())
        assert set(payload) == {"fid", "r1", "r2", "r3", "mmd", "diversity"}
        assert payload["r1"] <= payload["r2"] <= payload["r3"]
        stats_real = metrics.fit_gaussian(real)
        stats_gen = metrics.fit_gaussian(gen)
        assert payload["fid"] == pytest.approx(
            metrics.frechet_distance(stats_real, stats_gen), rel=1e-4)


class TestSweepVocab:
    def test_csv_structure(self, tmp_path):
        data_dir = write_corpus(tmp_path, num=2, frames=32)
        out = tmp_path / "sweep.csv"
        code = dispatch(["sweep-vocab", "--ks", "4,16", "--data", str(data_dir),
                         "--out", str(out), "--epochs", "4", "--hidden-width", "6",
                         "--learning-rate", "0.1", "--seed", "0"])
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("vocab_size,final_mse,utilization_fraction")
        assert len(lines) == 3
        assert lines[1].split(",")[0] == "4"
        assert lines[2].split(",")[0] == "16"

    def test_bad_ks_rejected(self, tmp_path, capsys):
        data_dir = write_corpus(tmp_path, num=1, frames=16)
        assert dispatch(["sweep-vocab", "--ks", "a,b", "--data", str(data_dir),
                         "--out", str(tmp_path / "s.csv")]) == 2
        capsys.readouterr()
