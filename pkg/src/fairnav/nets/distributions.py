"""Stochastic policy heads: tanh-squashed Gaussians for velocity commands
and a two-way categorical for the move/stay filter.

Numpy versions serve rollouts; the Tensor versions are used inside
training losses with reparameterized noise.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_SQUASH_EPS = 1e-6


def sample_continuous(
    mean: np.ndarray,
    log_std: np.ndarray,
    rng: np.random.Generator | None,
    low: np.ndarray,
    high: np.ndarray,
    deterministic: bool = False,
    eps: np.ndarray | None = None,
) -> tuple[np.ndarray, float]:
    """Draw a squashed-Gaussian action mapped into [low, high].

    Returns (action, log_prob). Deterministic mode returns the squashed
    mean; its log_prob is evaluated at that point. A pre-drawn standard
    normal `eps` may be supplied so two draws can share their noise.
    """
    mean = np.asarray(mean, dtype=np.float64)
    log_std = np.clip(np.asarray(log_std, dtype=np.float64), LOG_STD_MIN, LOG_STD_MAX)
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    if deterministic:
        eps = np.zeros_like(mean)
    elif eps is None:
        eps = rng.standard_normal(mean.shape)
    u = mean + np.exp(log_std) * eps
    z = np.tanh(u)
    half_span = 0.5 * (high - low)
    action = low + (z + 1.0) * half_span
    logp = float(
        np.sum(
            -0.5 * eps * eps
            - log_std
            - _HALF_LOG_2PI
            - np.log(1.0 - z * z + _SQUASH_EPS)
            - np.log(half_span)
        )
    )
    return action, logp


def squashed_logprob_of_action(
    mean: np.ndarray,
    log_std: np.ndarray,
    action: np.ndarray,
    low: np.ndarray,
    high: np.ndarray,
) -> float:
    """Density of sample_continuous at a given action (for oracle checks)."""
    mean = np.asarray(mean, dtype=np.float64)
    log_std = np.clip(np.asarray(log_std, dtype=np.float64), LOG_STD_MIN, LOG_STD_MAX)
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    half_span = 0.5 * (high - low)
    z = np.clip((np.asarray(action) - low) / half_span - 1.0, -1 + 1e-12, 1 - 1e-12)
    u = np.arctanh(z)
    eps = (u - mean) / np.exp(log_std)
    return float(
        np.sum(
            -0.5 * eps * eps
            - log_std
            - _HALF_LOG_2PI
            - np.log(1.0 - z * z)
            - np.log(half_span)
        )
    )


def sample_binary(
    logits: np.ndarray,
    rng: np.random.Generator | None,
    deterministic: bool = False,
) -> tuple[int, float]:
    """Categorical sample over {0, 1}; index 1 means "move".

    Deterministic mode takes the argmax; exact ties resolve to 1 so an
    untrained filter lets agents move.
    """
    logits = np.asarray(logits, dtype=np.float64)
    assert logits.shape == (2,)
    shifted = logits - logits.max()
    probs = np.exp(shifted) / np.exp(shifted).sum()
    if deterministic:
        f = 1 if probs[1] >= probs[0] else 0
    else:
        f = int(rng.random() < probs[1])
    return f, float(np.log(probs[f]))


def squash_sample_t(
    mean: Tensor, log_std_raw: Tensor, noise: np.ndarray
) -> tuple[Tensor, Tensor]:
    """Differentiable reparameterized squashed sample for training.

    Returns (z, log_prob) where z is in (-1, 1) per dimension and
    log_prob sums over the action dimensions (shape (B, 1)). The constant
    bound-scaling correction is omitted; it does not affect gradients.
    """
    log_std = ad.clip(log_std_raw, LOG_STD_MIN, LOG_STD_MAX)
    std = ad.exp(log_std)
    u = mean + std * Tensor(noise.astype(mean.data.dtype))
    z = ad.tanh(u)
    logp = (
        Tensor((-0.5 * noise * noise - _HALF_LOG_2PI).astype(mean.data.dtype))
        - log_std
        - ad.log(1.0 - z * z + _SQUASH_EPS)
    )
    return z, logp.sum(axis=1, keepdims=True)
