"""Closed-form DDPM arithmetic: schedules, forward noising, posteriors, reverse steps.

All functions accept either a single sample (``s`` an int) or a batch whose
leading axis is matched by a 1-D integer array ``s``. Everything runs in
float64 and is a pure function of its inputs.
"""
from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DiffusionConfig",
    "NoiseSchedule",
    "DiffusionSample",
    "PosteriorParams",
    "build_schedule",
    "forward_sample",
    "forward_step",
    "posterior_params",
    "predict_mu",
    "reverse_step",
    "recover_y0",
    "simple_loss",
    "draw_sample",
    "schedule_csv",
    "schedule_hash",
]


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance tables indexed by diffusion step ``s = 1..S``.

    Arrays are stored 0-based (``beta[s - 1]``); use the accessors for
    1-based lookups. ``alpha_bar_prev`` carries the ``alpha_bar_0 = 1``
    convention so the posterior is defined at ``s = 1``.
    """

    S: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    alpha_bar_prev: np.ndarray
    beta_tilde: np.ndarray
    beta_start: float
    beta_end: float
    kind: str = "linear"

    def check_step(self, s) -> np.ndarray:
        s_arr = np.asarray(s)
        if not np.issubdtype(s_arr.dtype, np.integer):
            if np.any(s_arr != np.round(s_arr)):
                raise ValueError(f"diffusion step must be an integer, got {s!r}")
            s_arr = s_arr.astype(np.int64)
        if np.any(s_arr < 1) or np.any(s_arr > self.S):
            raise ValueError(f"diffusion step out of range 1..{self.S}: {s!r}")
        return s_arr

    def ab(self, s) -> np.ndarray:
        """alpha_bar_s with alpha_bar_0 = 1."""
        s_arr = np.asarray(s)
        if np.any(s_arr < 0) or np.any(s_arr > self.S):
            raise ValueError(f"diffusion step out of range 0..{self.S}: {s!r}")
        out = np.concatenate([[1.0], self.alpha_bar])[s_arr]
        return out if s_arr.ndim else float(out)

    def config(self) -> dict:
        return {"S": self.S, "beta_start": self.beta_start, "beta_end": self.beta_end, "kind": self.kind}


@dataclass(frozen=True)
class DiffusionSample:
    y_s: np.ndarray
    s: np.ndarray | int
    eps: np.ndarray


@dataclass(frozen=True)
class PosteriorParams:
    mu_tilde: np.ndarray
    beta_tilde: np.ndarray | float


def build_schedule(S: int = 100, beta_start: float = 3e-3, beta_end: float = 0.06,
                   kind: str = "linear") -> NoiseSchedule:
    if kind != "linear":
        raise ValueError(f"unknown schedule kind {kind!r}")
    if int(S) != S or S < 1:
        raise ValueError(f"S must be a positive integer, got {S!r}")
    S = int(S)
    if not (0.0 < beta_start < 1.0 and 0.0 < beta_end < 1.0):
        raise ValueError("beta bounds must lie in (0, 1)")
    if beta_start > beta_end:
        raise ValueError("beta_start must not exceed beta_end")
    beta = np.linspace(beta_start, beta_end, S) if S > 1 else np.array([beta_start])
    alpha = 1.0 - beta
    # explicit running product so alpha_bar[s] == alpha_bar[s-1] * alpha[s] bit-exactly
    alpha_bar = np.empty(S)
    acc = 1.0
    for i in range(S):
        acc = acc * alpha[i]
        alpha_bar[i] = acc
    alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    beta_tilde = (1.0 - alpha_bar_prev) / (1.0 - alpha_bar) * beta
    return NoiseSchedule(S, _frozen(beta), _frozen(alpha), _frozen(alpha_bar),
                         _frozen(alpha_bar_prev), _frozen(beta_tilde),
                         float(beta_start), float(beta_end), kind)


def _coef(table: np.ndarray, s: np.ndarray, ndim: int) -> np.ndarray | float:
    """Look up a per-step coefficient and shape it to broadcast over a batch."""
    v = table[s - 1]
    if np.ndim(v) == 0:
        return float(v)
    return v.reshape(v.shape + (1,) * (ndim - 1))


def _same_shape(a, b, what: str) -> None:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch for {what}: {np.shape(a)} vs {np.shape(b)}")


def _batch_step(s, sched: NoiseSchedule, x: np.ndarray) -> np.ndarray:
    s = sched.check_step(s)
    if s.ndim > 1 or (s.ndim == 1 and (x.ndim == 0 or s.shape[0] != x.shape[0])):
        raise ValueError(f"step array of shape {s.shape} does not match batch of shape {x.shape}")
    return s


def forward_sample(y0, s, eps, sched: NoiseSchedule) -> np.ndarray:
    """One-shot forward noising: sqrt(ab_s) * y0 + sqrt(1 - ab_s) * eps."""
    y0 = np.asarray(y0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _same_shape(y0, eps, "y0/eps")
    s = _batch_step(s, sched, y0)
    ab = _coef(sched.alpha_bar, s, y0.ndim)
    return np.sqrt(ab) * y0 + np.sqrt(1.0 - ab) * eps


def forward_step(y_prev, s, eps, sched: NoiseSchedule) -> np.ndarray:
    """Single Markov transition q(y_s | y_{s-1})."""
    y_prev = np.asarray(y_prev, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _same_shape(y_prev, eps, "y_prev/eps")
    s = _batch_step(s, sched, y_prev)
    b = _coef(sched.beta, s, y_prev.ndim)
    return np.sqrt(1.0 - b) * y_prev + np.sqrt(b) * eps


def posterior_params(y_s, y0, s, sched: NoiseSchedule) -> PosteriorParams:
    """Mean and variance of q(y_{s-1} | y_s, y0)."""
    y_s = np.asarray(y_s, dtype=np.float64)
    y0 = np.asarray(y0, dtype=np.float64)
    _same_shape(y_s, y0, "y_s/y0")
    s = _batch_step(s, sched, y_s)
    nd = y_s.ndim
    b = _coef(sched.beta, s, nd)
    a = _coef(sched.alpha, s, nd)
    ab = _coef(sched.alpha_bar, s, nd)
    abp = _coef(sched.alpha_bar_prev, s, nd)
    mu = (np.sqrt(abp) * b / (1.0 - ab)) * y0 + (np.sqrt(a) * (1.0 - abp) / (1.0 - ab)) * y_s
    bt = sched.beta_tilde[s - 1]
    return PosteriorParams(mu, float(bt) if np.ndim(bt) == 0 else bt)


def predict_mu(y_s, s, eps_hat, sched: NoiseSchedule) -> np.ndarray:
    """Reverse-process mean from a noise prediction."""
    y_s = np.asarray(y_s, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    _same_shape(y_s, eps_hat, "y_s/eps_hat")
    s = _batch_step(s, sched, y_s)
    nd = y_s.ndim
    b = _coef(sched.beta, s, nd)
    a = _coef(sched.alpha, s, nd)
    ab = _coef(sched.alpha_bar, s, nd)
    return (y_s - (b / np.sqrt(1.0 - ab)) * eps_hat) / np.sqrt(a)


def reverse_step(y_s, s, eps_hat, z, sched: NoiseSchedule, posterior_variance: bool = False) -> np.ndarray:
    """One ancestral sampling step y_s -> y_{s-1}.

    ``z`` must be exactly zero wherever ``s == 1``. With ``posterior_variance``
    the noise scale is sqrt(beta_tilde_s) instead of sqrt(beta_s).
    """
    y_s = np.asarray(y_s, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    _same_shape(y_s, z, "y_s/z")
    s_arr = _batch_step(s, sched, y_s)
    last = s_arr == 1
    if np.any(last):
        zl = z if s_arr.ndim == 0 else z[last]
        if np.any(zl != 0):
            raise ValueError("z must be zero at s = 1")
    mu = predict_mu(y_s, s_arr, eps_hat, sched)
    var = sched.beta_tilde if posterior_variance else sched.beta
    return mu + np.sqrt(_coef(var, s_arr, y_s.ndim)) * z


def recover_y0(y_s, s, eps_hat, sched: NoiseSchedule) -> np.ndarray:
    """Invert the one-shot forward map for a given noise estimate."""
    y_s = np.asarray(y_s, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    _same_shape(y_s, eps_hat, "y_s/eps_hat")
    s = _batch_step(s, sched, y_s)
    ab = _coef(sched.alpha_bar, s, y_s.ndim)
    return (y_s - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)


def simple_loss(eps, eps_hat) -> float:
    """Mean squared error over all elements."""
    eps = np.asarray(eps, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    _same_shape(eps, eps_hat, "eps/eps_hat")
    return float(np.mean((eps - eps_hat) ** 2))


def draw_sample(y0, sched: NoiseSchedule, rng: np.random.Generator) -> DiffusionSample:
    """Draw s ~ U{1..S} per batch element and noise y0 accordingly."""
    y0 = np.asarray(y0, dtype=np.float64)
    s = rng.integers(1, sched.S + 1, size=y0.shape[0])
    eps = rng.standard_normal(y0.shape)
    return DiffusionSample(forward_sample(y0, s, eps, sched), s, eps)


def schedule_csv(sched: NoiseSchedule) -> str:
    buf = io.StringIO()
    buf.write("s,beta,alpha,alpha_bar,beta_tilde\n")
    for i in range(sched.S):
        row = (sched.beta[i], sched.alpha[i], sched.alpha_bar[i], sched.beta_tilde[i])
        buf.write(f"{i + 1}," + ",".join(f"{v:.16e}" for v in row) + "\n")
    return buf.getvalue()


def schedule_hash(sched: NoiseSchedule) -> str:
    return hashlib.sha256(schedule_csv(sched).encode()).hexdigest()


@dataclass(frozen=True)
class DiffusionConfig:
    S: int = 100
    beta_start: float = 3e-3
    beta_end: float = 0.06
    kind: str = "linear"

    def build(self) -> NoiseSchedule:
        return build_schedule(self.S, self.beta_start, self.beta_end, self.kind)
