import json

import numpy as np
import pytest

from gaitdiff.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from gaitdiff.ddpm import DiffusionConfig, build_schedule, predict_mu
from gaitdiff.denoiser import GaussianOracleDenoiser, LinearDenoiser, TinyTransformer, TransformerConfig
from gaitdiff.engine import (SamplingError, TrainConfig, TrainingError, git_blob_sha1, prepare_windows, reconstruct,
                             rollout, rollout_world, run_manifest, sample_window, train)
from gaitdiff.motion import DEFAULT_SKELETON as SK, Clip, DropoutScheduler, GaitParams, Normalizer, Window
from gaitdiff.motion import gen_synthetic_gait
from gaitdiff.optim import AdamState

SCHED = build_schedule()
M0, V0 = 0.5, 0.04


def _gauss_windows(n, T_h=2, T_p=2, D=4, C=3, seed=0):
    rng = np.random.default_rng(seed)
    return [Window(M0 + np.sqrt(V0) * rng.standard_normal((T_h, D)), rng.standard_normal((T_h + T_p, C)),
                   M0 + np.sqrt(V0) * rng.standard_normal((T_p, D))) for _ in range(n)]


def _linear(seed=0, T_h=2, T_p=2, D=4, scale=0.05):
    model = LinearDenoiser(T_h, T_p, D=D, seed=seed, dtype=np.float64)
    model.params["w"].data[...] = np.random.default_rng(seed).standard_normal(model.params["w"].shape) * scale
    return model


def _tiny():
    return TinyTransformer(TransformerConfig(T_h=2, T_p=2, D=4, C=3, d_model=8, heads=2), seed=1)


def _cfg(**kw):
    base = dict(epochs=2, batch_size=16, T_h=2, T_p=2, dropout=DropoutScheduler(warmup_epochs=0))
    base.update(kw)
    return TrainConfig(**base)


# -- training -----------------------------------------------------------------

def test_oracle_loss_trace_is_flat_at_residual_variance():
    # Per element the residual is N(0, r(s)) with r(s) = ab v0 / (ab v0 + 1 - ab);
    # windows share one s across their 8 elements.
    ab = SCHED.alpha_bar
    r = ab * V0 / (ab * V0 + 1 - ab)
    expected = float(np.mean(r))
    n_win, per_win = 2000, 8
    var_win = np.var(r) + np.mean(2 * r ** 2) / per_win
    se = float(np.sqrt(var_win / n_win))
    oracle = GaussianOracleDenoiser(M0, V0, SCHED)
    res = train(_gauss_windows(n_win), oracle, _cfg(epochs=4, batch_size=250, normalize=False), SCHED,
                rng=np.random.default_rng(0))
    assert res.steps == 0 and res.optimizer is None
    assert len(res.epoch_loss) == 4 and len(res.step_loss) == 32
    assert all(abs(v - expected) < 4 * se for v in res.epoch_loss), (res.epoch_loss, expected, se)
    assert abs(np.mean(res.epoch_loss) - expected) < 4 * se / 2


def test_zero_epochs_leaves_model_untouched():
    model = _tiny()
    before = {k: p.data.copy() for k, p in model.params.items()}
    res = train(_gauss_windows(8), model, _cfg(epochs=0))
    assert res.epoch_loss == [] and res.step_loss == [] and res.steps == 0
    assert all(np.array_equal(before[k], p.data) for k, p in model.params.items())


def test_training_is_deterministic_and_reduces_loss():
    runs = []
    for _ in range(2):
        res = train(_gauss_windows(32), _linear(scale=0.0), _cfg(epochs=30, lr=1e-2), SCHED,
                    rng=np.random.default_rng(4))
        runs.append(res)
    assert runs[0].epoch_loss == runs[1].epoch_loss
    assert runs[0].steps == 60
    assert runs[0].epoch_loss[-1] < runs[0].epoch_loss[0]


def test_transformer_training_runs_and_counts_steps():
    res = train(_gauss_windows(20), _tiny(), _cfg(epochs=2, batch_size=8), SCHED, rng=np.random.default_rng(0))
    assert res.steps == 6 and len(res.step_loss) == 6
    assert all(np.isfinite(res.epoch_loss))


def test_nonfinite_loss_raises_with_parameter_norms():
    model = _linear()
    model.params["w"].data[0, 0] = np.inf
    with pytest.raises(TrainingError, match="w="):
        train(_gauss_windows(4), model, _cfg(epochs=1))


def test_window_shape_mismatch():
    with pytest.raises(ValueError, match="T_h"):
        train(_gauss_windows(4, T_h=3), _linear(), _cfg())


def test_prepare_windows_counts():
    clips = [gen_synthetic_gait(GaitParams(duration=2.0), seed=i) for i in range(2)]
    wins = prepare_windows(clips, SK, 10, 10)
    assert len(wins) == 4 * 2 * 21
    plain = prepare_windows(clips, SK, 10, 10, augment_clips=False)
    assert len(plain) == 42
    # root-relative: pelvis ground coords vanish
    assert np.abs(plain[0].x.reshape(10, -1, 3)[:, 0, [0, 2]]).max() < 1e-12


# -- sampling -----------------------------------------------------------------

def test_single_step_chain_is_one_mean_prediction():
    sched = build_schedule(1, 0.3, 0.3)
    oracle = GaussianOracleDenoiser(M0, V0, sched, T_p=2)
    x, c = np.zeros((2, 4)), np.zeros((4, 3))
    out = sample_window(x, c, oracle, sched, np.random.default_rng(9))
    y1 = np.random.default_rng(9).standard_normal((1, 2, 4))
    eps = oracle.predict_conditioned(y1, np.array([1]), None)
    np.testing.assert_array_equal(out, predict_mu(y1, np.array([1]), eps, sched)[0])


def test_sampling_is_seeded_and_batched():
    model = _linear()
    x, c = np.random.default_rng(0).standard_normal((2, 4)), np.zeros((4, 3))
    a = sample_window(x, c, model, SCHED, np.random.default_rng(1))
    b = sample_window(x, c, model, SCHED, np.random.default_rng(1))
    assert np.array_equal(a, b) and a.shape == (2, 4)
    batch = sample_window(np.stack([x, x]), np.stack([c, c]), model, SCHED, np.random.default_rng(1))
    assert batch.shape == (2, 2, 4) and not np.array_equal(batch[0], batch[1])


def test_oracle_window_statistics():
    oracle = GaussianOracleDenoiser(M0, V0, SCHED, T_p=2)
    out = sample_window(np.zeros((2000, 2, 4)), np.zeros((2000, 4, 3)), oracle, SCHED, np.random.default_rng(2))
    assert abs(out.mean() - M0) < 0.02 * M0
    assert abs(out.std() - np.sqrt(V0)) < 0.05 * np.sqrt(V0)


def test_sampling_errors():
    oracle = GaussianOracleDenoiser(M0, V0, SCHED, T_p=2)
    with pytest.raises(ValueError, match="control context"):
        sample_window(np.zeros((2, 4)), np.zeros((5, 3)), oracle, SCHED, np.random.default_rng(0))
    blowup = _linear(scale=1e200)
    with pytest.raises(SamplingError), np.errstate(all="ignore"):
        sample_window(np.ones((2, 4)), np.ones((4, 3)), blowup, SCHED, np.random.default_rng(0))


def test_normalizer_is_applied_around_the_chain():
    oracle = GaussianOracleDenoiser(0.0, 1.0, SCHED, T_p=2)
    norm = Normalizer(np.full(4, 10.0), np.full(4, 2.0), np.zeros(3), np.ones(3))
    out = sample_window(np.zeros((3000, 2, 4)), np.zeros((3000, 4, 3)), oracle, SCHED, np.random.default_rng(3), norm)
    assert abs(out.mean() - 10.0) < 0.1 and abs(out.std() - 2.0) < 0.1


# -- rollout ------------------------------------------------------------------

def test_rollout_base_case_matches_window():
    model = _linear()
    seed = np.random.default_rng(5).standard_normal((2, 4))
    ctrl = np.random.default_rng(6).standard_normal((10, 3))
    one = rollout(seed, ctrl, 1, model, SCHED, np.random.default_rng(7))
    win = sample_window(seed, ctrl[:4], model, SCHED, np.random.default_rng(7))
    np.testing.assert_array_equal(one[0], win[0])


def test_rollout_is_causal_in_controls():
    model = _linear()
    seed = np.zeros((2, 4))
    ctrl = np.random.default_rng(6).standard_normal((12, 3))
    a = rollout(seed, ctrl, 8, model, SCHED, np.random.default_rng(1))
    late = ctrl.copy()
    late[9:] += 5.0
    b = rollout(seed, late, 8, model, SCHED, np.random.default_rng(1))
    # frame k sees controls [k, k + 4); index 9 first enters at k = 6
    assert np.array_equal(a[:6], b[:6]) and not np.array_equal(a[6:], b[6:])


def test_rollout_diversity_and_padding():
    model = _linear()
    seed = np.zeros((2, 4))
    a = rollout(seed, np.zeros((3, 3)), 5, model, SCHED, np.random.default_rng(1))
    b = rollout(seed, np.zeros((3, 3)), 5, model, SCHED, np.random.default_rng(2))
    assert np.abs(a - b).max() > 0
    with pytest.raises(ValueError):
        rollout(seed, np.zeros((3, 3)), 5, model, SCHED, np.random.default_rng(1), pad=False)
    with pytest.raises(ValueError):
        rollout(seed, np.zeros((3, 3)), 0, model, SCHED, np.random.default_rng(1))


def test_oracle_rollout_is_stationary():
    oracle = GaussianOracleDenoiser(M0, V0, SCHED, T_p=10)
    frames = rollout(np.full((10, 63), M0), np.zeros((10, 3)), 100, oracle, SCHED, np.random.default_rng(0))
    assert frames.shape == (100, 63)
    assert abs(frames.mean() - M0) < 0.02 * M0
    assert abs(frames.std() - np.sqrt(V0)) < 0.05 * np.sqrt(V0)


def test_rollout_world_continues_the_root_path():
    clip = gen_synthetic_gait(GaitParams(duration=1.0, profile="constant"), seed=0)
    seed_clip = Clip(clip.fps, clip.motion[:10], clip.control[:10])
    oracle = GaussianOracleDenoiser(0.0, 1e-6, SCHED, T_p=10)
    out = rollout_world(seed_clip, 5, clip.control, oracle, SCHED, np.random.default_rng(0))
    assert out.T == 5
    np.testing.assert_array_equal(out.control, clip.control[10:15])
    # with a near-zero local pose the joints sit on the integrated pelvis path
    pelvis = out.joints()[:, 0]
    step = np.diff(np.concatenate([clip.joints()[9:10, 0], pelvis])[:, 2])
    np.testing.assert_allclose(step, clip.control[9:14, 0] / clip.fps, atol=1e-3)


# -- reconstruction -----------------------------------------------------------

def _masked_walk(T=40, lo=15, hi=25, joints=(10, 11, 12)):
    clip = gen_synthetic_gait(GaitParams(duration=T / 20), seed=2)
    from gaitdiff.motion import local_clip
    local, _ = local_clip(clip, SK)
    mask = np.ones_like(local.motion, bool)
    for j in joints:
        mask[lo:hi, 3 * j:3 * j + 3] = False
    return local, local.with_mask(mask)


def test_all_observed_clip_is_returned_unchanged():
    local, _ = _masked_walk()
    rec = reconstruct(local, _linear(D=63, T_h=10, T_p=10), SCHED, np.random.default_rng(0))
    assert rec.iterations == 0 and rec.complete and rec.clip is local


@pytest.mark.parametrize("average", [False, True])
def test_reconstruction_contract(average):
    full, masked = _masked_walk()
    oracle = GaussianOracleDenoiser(0.0, 1.0, SCHED, T_p=10)
    norm = Normalizer.fit(full.motion, full.control)
    rec = reconstruct(masked, oracle, SCHED, np.random.default_rng(0), norm, T_h=10, average=average)
    assert rec.complete and rec.clip.mask is None
    obs = masked.mask
    assert np.array_equal(rec.clip.motion[obs], masked.motion[obs])
    hole = ~obs
    assert np.all(np.isfinite(rec.clip.motion[hole])) and np.any(rec.clip.motion[hole] != 0)


def test_reconstruction_fills_leading_hole():
    full, masked = _masked_walk(lo=0, hi=6)
    oracle = GaussianOracleDenoiser(0.0, 1.0, SCHED, T_p=10)
    rec = reconstruct(masked, oracle, SCHED, np.random.default_rng(0), Normalizer.fit(full.motion, full.control),
                      T_h=10)
    assert rec.complete
    assert np.array_equal(rec.clip.motion[masked.mask], masked.motion[masked.mask])


def test_reconstruction_limits():
    _, masked = _masked_walk(lo=5, hi=38)
    oracle = GaussianOracleDenoiser(0.0, 1.0, SCHED, T_p=10)
    with pytest.raises(ValueError, match="horizon"):
        reconstruct(masked, oracle, SCHED, np.random.default_rng(0), T_h=10, horizon=5)
    with pytest.raises(ValueError, match="T_h"):
        reconstruct(masked, oracle, SCHED, np.random.default_rng(0))
    rec = reconstruct(masked, oracle, SCHED, np.random.default_rng(0), T_h=10, max_iterations=1)
    assert rec.iterations == 1 and not rec.complete
    assert rec.clip.mask is not None and np.array_equal(rec.clip.mask, ~rec.unfilled)


# -- manifest and checkpoints -------------------------------------------------

def test_git_blob_sha1():
    assert git_blob_sha1(b"") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"
    assert git_blob_sha1(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


def test_run_manifest_uses_relative_paths(tmp_path):
    (tmp_path / "data").mkdir()
    f = tmp_path / "data" / "a.csv"
    f.write_text("x\n")
    man = run_manifest({"k": 1}, 3, SCHED, str(tmp_path / "model.ckpt"), [f], tmp_path)
    assert man["dataset"] == {"data/a.csv": git_blob_sha1(b"x\n")}
    assert man["checkpoint"] == "model.ckpt" and man["seed"] == 3
    json.dumps(man)


def test_checkpoint_round_trip(tmp_path):
    model = _tiny()
    res = train(_gauss_windows(16), model, _cfg(epochs=1, batch_size=8), SCHED, rng=np.random.default_rng(0))
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, SCHED, res.normalizer, step=res.steps, epoch=1, optimizer=res.optimizer,
                    extra={"note": "t"})
    ck = load_checkpoint(path)
    assert ck.step == 2 and ck.epoch == 1 and ck.meta["extra"] == {"note": "t"}
    assert ck.sched.config() == SCHED.config()
    for k, p in model.params.items():
        assert np.array_equal(ck.denoiser.params[k].data, p.data.astype(np.float32)), k
        assert np.array_equal(ck.optimizer.m[k], res.optimizer.m[k].astype(np.float32))
    assert ck.optimizer.step == res.optimizer.step
    assert np.array_equal(ck.normalizer.motion_mean, res.normalizer.motion_mean)


def test_checkpoint_errors(tmp_path):
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "o.ckpt", GaussianOracleDenoiser(0, 1, SCHED), SCHED, Normalizer.identity(4))
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, _tiny(), SCHED, Normalizer.identity(4))
    raw = path.read_bytes()
    (tmp_path / "bad.ckpt").write_bytes(b"NOTAFILE" + raw[8:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "bad.ckpt")
    (tmp_path / "short.ckpt").write_bytes(raw[:-4])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "short.ckpt")
    (tmp_path / "long.ckpt").write_bytes(raw + b"\0" * 4)
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(tmp_path / "long.ckpt")


def test_train_config_validation():
    for kw in (dict(epochs=-1), dict(batch_size=0), dict(lr=0.0)):
        with pytest.raises(ValueError):
            TrainConfig(**kw).validate()
    assert TrainConfig().diffusion == DiffusionConfig()
    assert isinstance(AdamState.for_params({"w": np.zeros(1)}), AdamState)
