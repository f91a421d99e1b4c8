import numpy as np
import pytest

from gaitdiff.ddpm import build_schedule, forward_sample
from gaitdiff.denoiser import (GaussianOracleDenoiser, LinearDenoiser, TinyTransformer, TransformerConfig,
                               build_denoiser, step_embedding, t5_buckets, trunc_normal)

SMALL = TransformerConfig(T_h=3, T_p=2, D=6, C=3, d_model=8, heads=2)
SCHED = build_schedule()


def _inputs(cfg, B=4, seed=0):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal((B, cfg.T_p, cfg.D)), rng.integers(1, 101, B),
            rng.standard_normal((B, cfg.T_h, cfg.D)), rng.standard_normal((B, cfg.T_h + cfg.T_p, cfg.C)))


def _randomize_head(model, seed=3):
    rng = np.random.default_rng(seed)
    w = model.params["head.fc2.w"]
    w.data[...] = rng.standard_normal(w.shape) * 0.1


@pytest.mark.parametrize("s", [1, 30, 100])
def test_oracle_residual_is_orthogonal_to_input(s):
    # Posterior mean is the least-squares predictor: residual uncorrelated with y_s.
    rng = np.random.default_rng(s)
    m0, v0 = 0.5, 0.04
    y0 = m0 + np.sqrt(v0) * rng.standard_normal((200_000, 1, 1))
    eps = rng.standard_normal(y0.shape)
    y_s = forward_sample(y0, s, eps, SCHED)
    pred = GaussianOracleDenoiser(m0, v0, SCHED).predict_conditioned(y_s, np.full(len(y_s), s), None)
    resid = (eps - pred).ravel()
    assert abs(np.mean(resid)) < 5 * resid.std() / np.sqrt(resid.size)
    assert abs(np.corrcoef(resid, y_s.ravel())[0, 1]) < 0.01
    assert np.mean(resid ** 2) <= np.mean((eps - 1.02 * pred).ravel() ** 2)


def test_oracle_rejects_nonpositive_variance():
    with pytest.raises(ValueError):
        GaussianOracleDenoiser(0.0, 0.0, SCHED)


def test_fresh_transformer_predicts_zero():
    model = TinyTransformer(SMALL)
    assert np.all(model.predict(*_inputs(SMALL)) == 0.0)


def test_predict_accepts_unbatched_input():
    model = TinyTransformer(SMALL)
    _randomize_head(model)
    y, s, x, c = _inputs(SMALL)
    batch = model.predict(y, s, x, c)
    one = model.predict(y[1], s[1], x[1], c[1])
    assert one.shape == (SMALL.T_p, SMALL.D)
    np.testing.assert_allclose(one, batch[1], atol=1e-6)


def test_conditioned_path_matches_forward():
    model = TinyTransformer(SMALL)
    _randomize_head(model)
    y, s, x, c = _inputs(SMALL)
    direct = model.forward(y, s, x, c).data
    cached = model.predict_conditioned(y, s, model.condition(x, c))
    np.testing.assert_allclose(cached, direct, atol=1e-6)


def test_conditioning_changes_prediction():
    model = TinyTransformer(SMALL)
    _randomize_head(model)
    y, s, x, c = _inputs(SMALL)
    a = model.predict(y, s, x, c)
    b = model.predict(y, s, x, c + 1.0)
    assert not np.allclose(a, b)


def test_shape_and_finiteness_checks():
    model = TinyTransformer(SMALL)
    y, s, x, c = _inputs(SMALL)
    with pytest.raises(ValueError, match="x has shape"):
        model.predict(y, s, x[:, :2], c)
    bad = c.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        model.predict(y, s, x, bad)
    with pytest.raises(ValueError):
        TinyTransformer(TransformerConfig(d_model=10, heads=4))


@pytest.mark.parametrize("maker", [lambda seed: TinyTransformer(SMALL, seed=seed),
                                   lambda seed: LinearDenoiser(3, 2, D=6, seed=seed)])
def test_build_denoiser_reproduces_parameters(maker):
    a = maker(7)
    b = build_denoiser(a.config(), seed=7)
    assert list(a.params) == list(b.params)
    for k in a.params:
        assert np.array_equal(a.params[k].data, b.params[k].data), k


def test_build_denoiser_unknown_kind():
    with pytest.raises(ValueError):
        build_denoiser({"kind": "lstm"})


def test_linear_denoiser_shapes():
    model = LinearDenoiser(3, 2, D=6)
    y, s, x, c = _inputs(SMALL)
    assert model.predict(y, s, x, c).shape == y.shape
    assert model.loss(y, s, x, c, np.zeros_like(y)).data.shape == ()


def test_full_size_preset():
    cfg = TransformerConfig.full_size()
    assert (cfg.d_model, cfg.heads) == (256, 4)


def test_t5_buckets():
    rel = np.arange(-40, 41)
    b = t5_buckets(rel, 16, 32)
    assert b[rel == 0] == 0
    # exact buckets for |rel| < 4, direction in the top half
    np.testing.assert_array_equal(b[(rel > 0) & (rel < 4)], [9, 10, 11])
    np.testing.assert_array_equal(b[(rel < 0) & (rel > -4)], [3, 2, 1])
    assert b.min() >= 0 and b.max() <= 15
    neg = b[rel <= 0][::-1]
    assert np.all(np.diff(neg) >= 0) and neg[-1] == 7
    assert b[-1] == 15


def test_trunc_normal_bounds():
    z = trunc_normal(np.random.default_rng(0), (20_000,), std=0.5)
    assert np.abs(z).max() <= 1.0
    assert 0.4 < z.std() < 0.5


def test_step_embedding():
    e = step_embedding(np.array([1, 50]), 7)
    assert e.shape == (2, 7)
    assert np.all(e[:, -1] == 0)
    assert not np.allclose(e[0], e[1])


def test_oracle_closed_form_cases():
    s = np.array([25])
    ab = SCHED.alpha_bar[24]
    e = np.random.default_rng(4).standard_normal((1, 2, 3))
    tight = GaussianOracleDenoiser(0.5, 1e-14, SCHED)
    y_s = np.sqrt(ab) * 0.5 + np.sqrt(1 - ab) * e
    np.testing.assert_allclose(tight.predict_conditioned(y_s, s, None), e, atol=1e-9)
    at_mean = np.full((1, 2, 3), np.sqrt(ab) * 0.5)
    assert np.all(GaussianOracleDenoiser(0.5, 0.04, SCHED).predict_conditioned(at_mean, s, None) == 0)
    std_normal = GaussianOracleDenoiser(0.0, 1.0, SCHED)
    np.testing.assert_allclose(std_normal.predict_conditioned(y_s, s, None), np.sqrt(1 - ab) * y_s, rtol=1e-12)


def test_oracle_beats_perturbed_predictors():
    rng = np.random.default_rng(5)
    n = 10_000
    y0 = rng.standard_normal((n, 1, 1))
    eps = rng.standard_normal(y0.shape)
    s = rng.integers(1, 101, n)
    y_s = forward_sample(y0, s, eps, SCHED)
    pred = GaussianOracleDenoiser(0.0, 1.0, SCHED).predict_conditioned(y_s, s, None)
    best = np.mean((eps - pred) ** 2)
    for k in (0.9, 1.1):
        assert best < np.mean((eps - k * pred) ** 2)


def test_relative_bias_breaks_frame_permutation():
    model = TinyTransformer(SMALL)
    _randomize_head(model)
    y, s, x, c = _inputs(SMALL)
    swapped = x[:, [1, 0, 2]]
    assert not np.allclose(model.predict(y, s, x, c), model.predict(y, s, swapped, c))


def test_seeded_model_is_bit_identical():
    y, s, x, c = _inputs(SMALL)
    outs = []
    for _ in range(2):
        m = TinyTransformer(SMALL, seed=11)
        _randomize_head(m)
        outs.append(m.predict(y, s, x, c))
    assert np.array_equal(*outs)


def test_linear_layer_gradient_matches_closed_form():
    from gaitdiff.autodiff import gradients
    model = LinearDenoiser(3, 2, D=6, dtype=np.float64)
    rng = np.random.default_rng(6)
    model.params["w"].data[...] = rng.standard_normal(model.params["w"].shape) * 0.1
    y, s, x, c = _inputs(SMALL)
    eps = rng.standard_normal(y.shape)
    B = y.shape[0]
    X = np.concatenate([y.reshape(B, -1), x.reshape(B, -1), c.reshape(B, -1), step_embedding(s, 16)], axis=1)
    resid = model.forward(y, s, x, c).data.reshape(B, -1) - eps.reshape(B, -1)
    g = gradients(model.loss(y, s, x, c, eps), model.params)
    np.testing.assert_allclose(g["w"], 2.0 / resid.size * X.T @ resid, rtol=1e-10, atol=1e-14)


def test_exact_prediction_gives_zero_gradients():
    from gaitdiff.autodiff import gradients
    model = TinyTransformer(SMALL, dtype=np.float64)
    y, s, x, c = _inputs(SMALL)
    g = gradients(model.loss(y, s, x, c, np.zeros_like(y)), model.params)
    assert all(np.all(v == 0) for v in g.values())
