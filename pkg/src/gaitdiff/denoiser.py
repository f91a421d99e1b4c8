"""Noise predictors eps(y_s, s, x, c).

Three implementations share the same call surface:

* :class:`GaussianOracleDenoiser` -- exact posterior-mean noise for data drawn
  from N(m0, v0 I); ignores the conditioning.
* :class:`LinearDenoiser` -- one affine map over the flattened inputs.
* :class:`TinyTransformer` -- per-modality encoders, a cross-modal fusion
  stack over the time-concatenated embeddings, and a step-conditioned
  decoder that cross-attends to the fused memory.

Batched inputs carry a leading batch axis; unbatched inputs are accepted by
:meth:`Denoiser.predict` and returned without one.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .ddpm import NoiseSchedule


class Denoiser:
    trainable = False
    params: dict[str, Tensor] = {}

    def condition(self, x: np.ndarray, c: np.ndarray):
        """Precompute whatever depends only on the conditioning (batched)."""
        return (x, c)

    def predict_conditioned(self, y_s: np.ndarray, s: np.ndarray, ctx) -> np.ndarray:
        raise NotImplementedError

    def predict(self, y_s, s, x, c) -> np.ndarray:
        y_s = np.asarray(y_s, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        c = np.asarray(c, dtype=np.float64)
        single = y_s.ndim == 2
        if single:
            y_s, x, c = y_s[None], x[None], c[None]
        s = np.broadcast_to(np.asarray(s, dtype=np.int64), (y_s.shape[0],))
        out = self.predict_conditioned(y_s, s, self.condition(x, c))
        if out.shape != y_s.shape:
            raise AssertionError(f"denoiser returned {out.shape}, expected {y_s.shape}")
        return out[0] if single else out


class GaussianOracleDenoiser(Denoiser):
    """Minimiser of the simplified loss when y0 ~ N(m0, v0 I)."""

    def __init__(self, m0, v0: float, sched: NoiseSchedule, T_p: int | None = None):
        if not v0 > 0:
            raise ValueError(f"v0 must be positive, got {v0}")
        self.m0 = np.asarray(m0, dtype=np.float64)
        self.v0 = float(v0)
        self.sched = sched
        self.T_p = T_p

    def predict_conditioned(self, y_s, s, ctx):
        s = self.sched.check_step(s)
        ab = self.sched.alpha_bar[s - 1].reshape((-1,) + (1,) * (y_s.ndim - 1))
        return np.sqrt(1.0 - ab) * (y_s - np.sqrt(ab) * self.m0) / (ab * self.v0 + 1.0 - ab)


# -- shared pieces ------------------------------------------------------------

def step_embedding(s: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal encoding of integer diffusion steps, shape [B, dim]."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    ang = np.asarray(s, dtype=np.float64)[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=1)
    return emb


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    z = rng.standard_normal(shape)
    bad = np.abs(z) > 2.0
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > 2.0
    return z * std


def t5_buckets(rel: np.ndarray, num_buckets: int = 16, max_distance: int = 32) -> np.ndarray:
    """Bidirectional T5 relative-position buckets for ``rel = key_pos - query_pos``."""
    nb = num_buckets // 2
    out = (rel > 0).astype(np.int64) * nb
    n = np.abs(rel)
    max_exact = nb // 2
    small = n < max_exact
    with np.errstate(divide="ignore"):
        large = max_exact + (np.log(np.maximum(n, 1) / max_exact) / math.log(max_distance / max_exact)
                             * (nb - max_exact)).astype(np.int64)
    large = np.minimum(large, nb - 1)
    return out + np.where(small, n, large)


class _Params:
    """Ordered parameter registry; declaration order is the checkpoint order."""

    def __init__(self, dtype):
        self.dtype = dtype
        self.params: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> None:
        self.params[name] = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True)


def _check_input(name: str, a: np.ndarray, shape: tuple) -> None:
    if a.shape[1:] != shape:
        raise ValueError(f"{name} has shape {a.shape[1:]}, model expects {shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")


class LinearDenoiser(Denoiser):
    """Affine baseline over [y_s, x, c, step features]."""

    trainable = True

    def __init__(self, T_h: int, T_p: int, D: int = 63, C: int = 3, step_dim: int = 16,
                 seed: int = 0, dtype=np.float32):
        self.T_h, self.T_p, self.D, self.C, self.step_dim = T_h, T_p, D, C, step_dim
        rng = np.random.default_rng(seed)
        n_in = T_p * D + T_h * D + (T_h + T_p) * C + step_dim
        reg = _Params(dtype)
        reg.add("w", trunc_normal(rng, (n_in, T_p * D)))
        reg.add("b", np.zeros(T_p * D))
        self.params = reg.params
        self.dtype = dtype

    def config(self) -> dict:
        return {"kind": "linear", "T_h": self.T_h, "T_p": self.T_p, "D": self.D, "C": self.C,
                "step_dim": self.step_dim}

    def forward(self, y_s, s, x, c) -> Tensor:
        B = y_s.shape[0]
        _check_input("y_s", y_s, (self.T_p, self.D))
        _check_input("x", x, (self.T_h, self.D))
        _check_input("c", c, (self.T_h + self.T_p, self.C))
        feats = np.concatenate([y_s.reshape(B, -1), x.reshape(B, -1), c.reshape(B, -1),
                                step_embedding(s, self.step_dim)], axis=1).astype(self.dtype)
        p = self.params
        out = Tensor(feats) @ p["w"] + p["b"]
        return ad.reshape(out, (B, self.T_p, self.D))

    def predict_conditioned(self, y_s, s, ctx):
        x, c = ctx
        with no_grad():
            return self.forward(y_s, s, x, c).data.astype(np.float64)

    def loss(self, y_s, s, x, c, eps) -> Tensor:
        return ad.mse(self.forward(y_s, s, x, c), eps)


@dataclass
class TransformerConfig:
    T_h: int = 10
    T_p: int = 10
    D: int = 63
    C: int = 3
    d_model: int = 64   # must cover the pose width so y_s can pass the decoder
    heads: int = 4
    n_enc_motion: int = 1
    n_enc_control: int = 1
    n_fusion: int = 2
    n_dec: int = 1
    ff_mult: int = 4
    num_buckets: int = 16
    max_distance: int = 32
    init_std: float = 0.02

    @classmethod
    def full_size(cls, **kw) -> "TransformerConfig":
        """Full-scale architecture; the defaults are sized for one CPU core."""
        base = dict(d_model=256, heads=4, n_enc_motion=2, n_enc_control=2, n_fusion=6, n_dec=3)
        base.update(kw)
        return cls(**base)


class TinyTransformer(Denoiser):
    """Cross-modal encoder/decoder noise predictor with relative position bias.

    Blocks are pre-norm residual; feed-forward layers use GELU at width
    ``ff_mult * d_model``. The output head ends in a zero-initialised
    projection so a fresh model predicts zero noise.
    """

    trainable = True

    def __init__(self, cfg: TransformerConfig | None = None, seed: int = 0, dtype=np.float32, **kw):
        cfg = cfg or TransformerConfig(**kw)
        if cfg.d_model % cfg.heads:
            raise ValueError("d_model must be divisible by heads")
        self.cfg = cfg
        self.T_h, self.T_p = cfg.T_h, cfg.T_p
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        reg = _Params(dtype)
        d, std = cfg.d_model, cfg.init_std

        def lin(name, n_in, n_out, zero=False):
            reg.add(f"{name}.w", np.zeros((n_in, n_out)) if zero else trunc_normal(rng, (n_in, n_out), std))
            reg.add(f"{name}.b", np.zeros(n_out))

        def norm(name):
            reg.add(f"{name}.g", np.ones(d))
            reg.add(f"{name}.b", np.zeros(d))

        def attn(name):
            for part in ("q", "k", "v", "o"):
                lin(f"{name}.{part}", d, d)
            reg.add(f"{name}.rel", trunc_normal(rng, (cfg.num_buckets, cfg.heads), std))

        def ffn(name):
            lin(f"{name}.fc1", d, cfg.ff_mult * d)
            lin(f"{name}.fc2", cfg.ff_mult * d, d)

        def enc_layer(name):
            norm(f"{name}.ln1")
            attn(f"{name}.attn")
            norm(f"{name}.ln2")
            ffn(f"{name}.ffn")

        lin("motion_in", cfg.D, d)
        lin("control_in", cfg.C, d)
        for i in range(cfg.n_enc_motion):
            enc_layer(f"enc_m.{i}")
        for i in range(cfg.n_enc_control):
            enc_layer(f"enc_c.{i}")
        reg.add("tag.motion", trunc_normal(rng, (d,), std))
        reg.add("tag.control", trunc_normal(rng, (d,), std))
        for i in range(cfg.n_fusion):
            enc_layer(f"fuse.{i}")
        norm("fuse_ln")
        lin("step.fc1", d, d)
        lin("step.fc2", d, d)
        lin("dec_in", cfg.D + d, d)
        for i in range(cfg.n_dec):
            name = f"dec.{i}"
            norm(f"{name}.ln1")
            attn(f"{name}.self")
            norm(f"{name}.ln2")
            attn(f"{name}.cross")
            norm(f"{name}.ln3")
            ffn(f"{name}.ffn")
        norm("out_ln")
        lin("head.fc1", d, d)
        lin("head.fc2", d, cfg.D, zero=True)
        self.params = reg.params

        # time index of every token; relative bias is keyed on time differences
        T_h, T_p = cfg.T_h, cfg.T_p
        pos_m = np.arange(T_h)
        pos_c = np.arange(T_h + T_p)
        pos_y = np.arange(T_h, T_h + T_p)
        pos_mem = np.concatenate([pos_m, pos_c])

        def buckets(q, k):
            return t5_buckets(k[None, :] - q[:, None], cfg.num_buckets, cfg.max_distance)

        self._bk = {
            "m": buckets(pos_m, pos_m),
            "c": buckets(pos_c, pos_c),
            "mem": buckets(pos_mem, pos_mem),
            "y": buckets(pos_y, pos_y),
            "cross": buckets(pos_y, pos_mem),
        }

    def config(self) -> dict:
        return {"kind": "transformer", **asdict(self.cfg)}

    # -- building blocks ------------------------------------------------------

    def _lin(self, x, name):
        p = self.params
        return x @ p[f"{name}.w"] + p[f"{name}.b"]

    def _ln(self, x, name):
        p = self.params
        return ad.layer_norm(x, p[f"{name}.g"], p[f"{name}.b"])

    def _heads(self, t: Tensor) -> Tensor:
        B, L, d = t.shape
        H = self.cfg.heads
        return ad.transpose(ad.reshape(t, (B, L, H, d // H)), (0, 2, 1, 3))

    def _kv(self, mem: Tensor, name: str):
        return self._heads(self._lin(mem, f"{name}.k")), self._heads(self._lin(mem, f"{name}.v"))

    def _attend(self, x: Tensor, name: str, bucket: np.ndarray, mem: Tensor | None = None, kv=None) -> Tensor:
        B, Lq, d = x.shape
        H = self.cfg.heads
        q = self._heads(self._lin(x, f"{name}.q"))
        if kv is None:
            kv = self._kv(x if mem is None else mem, name)
        k, v = kv
        logits = (q @ ad.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(d // H))
        bias = ad.transpose(ad.take_rows(self.params[f"{name}.rel"], bucket), (2, 0, 1))
        w = ad.softmax(logits + bias, axis=-1)
        out = ad.reshape(ad.transpose(w @ v, (0, 2, 1, 3)), (B, Lq, d))
        return self._lin(out, f"{name}.o")

    def _ffn(self, x, name):
        return self._lin(ad.gelu(self._lin(x, f"{name}.fc1")), f"{name}.fc2")

    def _enc_layer(self, x, name, bucket):
        x = x + self._attend(self._ln(x, f"{name}.ln1"), f"{name}.attn", bucket)
        return x + self._ffn(self._ln(x, f"{name}.ln2"), f"{name}.ffn")

    # -- forward --------------------------------------------------------------

    def encode(self, x: np.ndarray, c: np.ndarray) -> Tensor:
        cfg = self.cfg
        _check_input("x", x, (cfg.T_h, cfg.D))
        _check_input("c", c, (cfg.T_h + cfg.T_p, cfg.C))
        hm = self._lin(Tensor(x.astype(self.dtype)), "motion_in")
        for i in range(cfg.n_enc_motion):
            hm = self._enc_layer(hm, f"enc_m.{i}", self._bk["m"])
        hc = self._lin(Tensor(c.astype(self.dtype)), "control_in")
        for i in range(cfg.n_enc_control):
            hc = self._enc_layer(hc, f"enc_c.{i}", self._bk["c"])
        h = ad.concat([hm + self.params["tag.motion"], hc + self.params["tag.control"]], axis=1)
        for i in range(cfg.n_fusion):
            h = self._enc_layer(h, f"fuse.{i}", self._bk["mem"])
        return self._ln(h, "fuse_ln")

    def decode(self, y_s: np.ndarray, s: np.ndarray, mem: Tensor, cross_kv: list | None = None) -> Tensor:
        cfg = self.cfg
        _check_input("y_s", y_s, (cfg.T_p, cfg.D))
        B = y_s.shape[0]
        temb = Tensor(step_embedding(s, cfg.d_model).astype(self.dtype))
        temb = self._lin(ad.gelu(self._lin(temb, "step.fc1")), "step.fc2")
        temb = ad.broadcast_to(ad.reshape(temb, (B, 1, cfg.d_model)), (B, cfg.T_p, cfg.d_model))
        h = self._lin(ad.concat([Tensor(y_s.astype(self.dtype)), temb], axis=2), "dec_in")
        for i in range(cfg.n_dec):
            name = f"dec.{i}"
            h = h + self._attend(self._ln(h, f"{name}.ln1"), f"{name}.self", self._bk["y"])
            kv = cross_kv[i] if cross_kv is not None else None
            h = h + self._attend(self._ln(h, f"{name}.ln2"), f"{name}.cross", self._bk["cross"], mem=mem, kv=kv)
            h = h + self._ffn(self._ln(h, f"{name}.ln3"), f"{name}.ffn")
        h = self._ln(h, "out_ln")
        return self._lin(ad.gelu(self._lin(h, "head.fc1")), "head.fc2")

    def forward(self, y_s, s, x, c) -> Tensor:
        return self.decode(np.asarray(y_s), np.asarray(s), self.encode(np.asarray(x), np.asarray(c)))

    def loss(self, y_s, s, x, c, eps) -> Tensor:
        return ad.mse(self.forward(y_s, s, x, c), eps)

    def condition(self, x, c):
        with no_grad():
            mem = self.encode(np.asarray(x), np.asarray(c))
            kv = [self._kv(mem, f"dec.{i}.cross") for i in range(self.cfg.n_dec)]
        return mem, kv

    def predict_conditioned(self, y_s, s, ctx):
        mem, kv = ctx
        with no_grad():
            return self.decode(y_s, s, mem, kv).data.astype(np.float64)


def build_denoiser(config: dict, seed: int = 0, dtype=np.float32) -> Denoiser:
    """Construct a trainable denoiser from its ``config()`` dictionary."""
    cfg = dict(config)
    kind = cfg.pop("kind")
    if kind == "transformer":
        return TinyTransformer(TransformerConfig(**cfg), seed=seed, dtype=dtype)
    if kind == "linear":
        return LinearDenoiser(seed=seed, dtype=dtype, **cfg)
    raise ValueError(f"unknown denoiser kind {kind!r}")
