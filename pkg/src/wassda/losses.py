"""Scalar training objectives.

Sign conventions live here once and for all: ``wasserstein_objective`` is
mean(target scores) - mean(source scores); the critic *maximizes* it and the
extractor *minimizes* it, but both of those belong to the training loop —
every function below just returns the value.  The gradient penalty is the
critic's burden alone and never reaches the extractor.

With ``gamma=0`` and ``alpha_pos=1`` the weighted focal loss collapses to
plain cross entropy exactly; that identity is the main regression guard.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .tensor import Tensor, grad, l2norm, log, tmean, tsum


@dataclass(frozen=True)
class LossConfig:
    """Knobs for the classification and adversarial objectives.

    ``alpha_pos=None`` means "derive the positive-class weight from the
    source training labels" (majority/minority count ratio); call
    :meth:`with_alpha_from` before handing the config to a loss.
    """

    rho: float = 10.0            # gradient-penalty coefficient
    gamma: float = 2.0           # focal exponent
    alpha_pos: float | None = None
    lambda_domain: float = 1.0   # extractor's weight on the domain term

    def __post_init__(self):
        if self.rho < 0 or not np.isfinite(self.rho):
            raise ValueError(f"rho must be finite and >= 0, got {self.rho}")
        if self.gamma < 0 or not np.isfinite(self.gamma):
            raise ValueError(f"focal exponent must be >= 0, got {self.gamma}")
        if self.alpha_pos is not None and not (np.isfinite(self.alpha_pos)
                                               and self.alpha_pos > 0):
            raise ValueError(f"alpha_pos must be positive, got {self.alpha_pos}")
        if self.lambda_domain < 0 or not np.isfinite(self.lambda_domain):
            raise ValueError(f"lambda_domain must be >= 0, got {self.lambda_domain}")

    def with_alpha_from(self, labels) -> "LossConfig":
        """Resolve ``alpha_pos`` to n_negative / n_positive of these labels."""
        labels = np.asarray(labels)
        n_pos = float(labels.sum())
        n_neg = float(labels.size - n_pos)
        if n_pos == 0 or n_neg == 0:
            raise ValueError("cannot derive class weight from a single-class split")
        return replace(self, alpha_pos=n_neg / n_pos)


def _as_probs_and_labels(probs, labels):
    if not isinstance(probs, Tensor):
        probs = Tensor(probs)
    y = labels.data if isinstance(labels, Tensor) else np.asarray(labels, dtype=np.float64)
    if probs.size == 0:
        raise ValueError("empty batch")
    if probs.shape != y.shape:
        raise ValueError(f"probs {probs.shape} vs labels {y.shape}")
    return probs, Tensor(y)


def cross_entropy(probs, labels) -> Tensor:
    """Mean binary cross entropy; log() is clamped so the value stays finite."""
    p, y = _as_probs_and_labels(probs, labels)
    return -tmean(y * log(p) + (1.0 - y) * log(1.0 - p))


def weighted_focal_loss(probs, labels, config: LossConfig) -> Tensor:
    """Class-weighted focal cross entropy.

    Per sample: alpha_pos * y * (1-p)^gamma * log p on the positive side,
    p^gamma * log(1-p) on the negative side, averaged with a minus sign.
    Reduces to :func:`cross_entropy` when gamma=0 and alpha_pos=1.
    """
    if config.alpha_pos is None:
        raise ValueError(
            "alpha_pos unresolved; call LossConfig.with_alpha_from(source labels) "
            "or set it explicitly")
    p, y = _as_probs_and_labels(probs, labels)
    pos = y * ((1.0 - p) ** config.gamma) * log(p) * config.alpha_pos
    neg = (1.0 - y) * (p ** config.gamma) * log(1.0 - p)
    return -tmean(pos + neg)


def wasserstein_objective(critic_scores_target, critic_scores_source) -> Tensor:
    """Mean target score minus mean source score (the critic's payoff)."""
    t = critic_scores_target if isinstance(critic_scores_target, Tensor) \
        else Tensor(critic_scores_target)
    s = critic_scores_source if isinstance(critic_scores_source, Tensor) \
        else Tensor(critic_scores_source)
    if t.size == 0 or s.size == 0:
        raise ValueError("empty score batch")
    return tmean(t) - tmean(s)


def interpolate_pairs(feats_a, feats_b, rng: np.random.Generator) -> Tensor:
    """Random convex combinations of paired rows, detached from upstream graphs.

    Pairs row i of each batch (truncating to the shorter one) with its own
    epsilon ~ U(0,1).  The result is a fresh leaf with requires_grad=True —
    the tape for the penalty starts here, which keeps conv/pool ops out of
    the second-order graph.
    """
    a = feats_a.data if isinstance(feats_a, Tensor) else np.asarray(feats_a)
    b = feats_b.data if isinstance(feats_b, Tensor) else np.asarray(feats_b)
    k = min(len(a), len(b))
    if k < 1:
        raise ValueError("interpolation needs at least one pair")
    eps = rng.uniform(size=(k, 1))
    return Tensor(eps * a[:k] + (1.0 - eps) * b[:k], requires_grad=True)


def gradient_penalty(critic, interpolated) -> Tensor:
    """Mean squared deviation of per-sample critic input-gradient norms from 1.

    ``interpolated`` must be a leaf tensor with requires_grad=True (see
    :func:`interpolate_pairs`).  The inner gradient is recorded, so the
    returned scalar can be differentiated w.r.t. the critic parameters.
    """
    if not isinstance(interpolated, Tensor) or not interpolated.requires_grad:
        raise ValueError("gradient_penalty needs features with requires_grad=True")
    scores = critic.penalty_forward(interpolated)
    (g,) = grad(tsum(scores), [interpolated], create_graph=True)
    norms = l2norm(g, axis=1)
    return tmean((norms - 1.0) ** 2.0)


def adversarial_objective(l_wd, l_grad, config: LossConfig):
    """Critic's penalized payoff: l_wd - rho * l_grad."""
    return l_wd - config.rho * l_grad
