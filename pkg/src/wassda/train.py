"""Source pretraining and the alternating adversarial optimization.

One outer step of the adversarial phase:

  (a) with the extractor frozen, the critic takes ``n_critic`` ascent steps
      on (score gap - rho * gradient penalty), using fresh interpolates each
      step but the same frozen feature batch;
  (b) with the critic frozen, the extractor and classifier take one descent
      step on classification loss + lambda * score gap.  The penalty term is
      absent here on purpose — it regularizes the critic only.

"Frozen" is literal: gradients are simply never computed for the other
player's parameters, so their values (and optimizer state) are bit-identical
across the phase.

``dann`` mode swaps the critic objective for a logistic domain classifier
trained with binary cross entropy, with the extractor maximizing it; the
``*_cnn`` modes have no domain player at all.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics as metrics_mod
from .data import DataError, DomainDataset, LabeledSplit, batch_iter
from .losses import (
    LossConfig,
    adversarial_objective,
    cross_entropy,
    gradient_penalty,
    interpolate_pairs,
    wasserstein_objective,
    weighted_focal_loss,
)
from .nets import ArchConfig, DomainCritic, ModelBundle, init_model
from .tensor import ParamStore, Tensor, grad, log, no_grad, sigmoid, tmean

MODES = ("target_only_cnn", "source_only_cnn", "dann", "wd_ada", "wd_wada")
ADVERSARIAL_MODES = ("dann", "wd_ada", "wd_wada")


class TrainingDiverged(RuntimeError):
    """A loss went non-finite; training aborted, partial logs kept."""


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.0

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be adam or sgd, got {self.kind!r}")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "wd_wada"
    seed: int = 0
    epochs: int = 30
    batch_size: int = 64
    n_critic: int = 5
    lr: float = 1e-3
    critic_lr: float = 1e-3
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    pretrain_epochs: int | None = None  # default: epochs // 4, at least 1
    eval_threshold: float = 0.5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n_critic < 1:
            raise ValueError(f"n_critic must be >= 1, got {self.n_critic}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.lr < 0 or self.critic_lr < 0:
            raise ValueError("learning rates must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def split_epochs(self) -> tuple[int, int]:
        """(pretrain, adversarial) epoch counts for the two-phase modes."""
        if self.pretrain_epochs is not None:
            pre = min(self.pretrain_epochs, self.epochs)
        else:
            pre = max(1, self.epochs // 4)
        return pre, self.epochs - pre


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    cls_loss: float
    w_estimate: float
    grad_penalty: float
    eval_auc: float | None
    wall_clock: float

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch, "phase": self.phase, "cls_loss": self.cls_loss,
            "w_estimate": self.w_estimate, "grad_penalty": self.grad_penalty,
            "eval_auc": self.eval_auc, "wall_clock": self.wall_clock,
        }


class TrainLog:
    """Per-epoch records, one per completed epoch, monotone epoch indices."""

    def __init__(self, records=None):
        self.records: list[EpochRecord] = list(records or [])

    def append(self, record: EpochRecord) -> None:
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError("epoch indices must increase")
        self.records.append(record)

    def extend(self, other: "TrainLog") -> "TrainLog":
        for r in other.records:
            self.append(r)
        return self

    def last(self) -> EpochRecord:
        return self.records[-1]

    def save_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")

    @staticmethod
    def load_jsonl(path) -> "TrainLog":
        log = TrainLog()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                d = json.loads(line)
                log.append(EpochRecord(**d))
        return log


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

def optimizer_step(params: ParamStore, grads: dict, config: OptimizerConfig,
                   lr: float) -> ParamStore:
    """Advance the named parameters one step; state lives inside the store.

    ``grads`` maps parameter name -> gradient (Tensor or ndarray).  Only the
    named parameters move; everything else is untouched bit-for-bit.
    """
    for name, g in grads.items():
        if name not in params:
            raise ValueError(f"unknown parameter {name!r}")
        gd = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
        p = params[name]
        if gd.shape != p.data.shape:
            raise ValueError(
                f"gradient shape {gd.shape} does not match parameter "
                f"{name!r} shape {p.data.shape}")
        state = params.state[name]
        if config.kind == "adam":
            t = state.get("t", 0) + 1
            m = state.get("m")
            v = state.get("v")
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
            m = config.beta1 * m + (1.0 - config.beta1) * gd
            v = config.beta2 * v + (1.0 - config.beta2) * gd * gd
            m_hat = m / (1.0 - config.beta1 ** t)
            v_hat = v / (1.0 - config.beta2 ** t)
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + config.eps)
            state.update(t=t, m=m, v=v)
        else:
            if config.momentum > 0.0:
                mu = state.get("mu")
                if mu is None:
                    mu = np.zeros_like(p.data)
                mu = config.momentum * mu + gd
                state["mu"] = mu
                p.data = p.data - lr * mu
            else:
                p.data = p.data - lr * gd
    return params


def _step_params(model: ModelBundle, loss: Tensor, names: list[str],
                 config: TrainConfig, lr: float) -> None:
    tensors = [model.store[n] for n in names]
    gs = grad(loss, tensors)
    optimizer_step(model.store, dict(zip(names, gs)), config.optimizer, lr)


def _require_finite(value: float, what: str) -> float:
    if not np.isfinite(value):
        raise TrainingDiverged(f"{what} became non-finite ({value})")
    return value


def evaluate_model(model: ModelBundle, split: LabeledSplit,
                   threshold: float = 0.5) -> metrics_mod.MetricsReport:
    with no_grad():
        scores = model.classifier.forward(model.extractor.forward(split.features))
    return metrics_mod.evaluate(scores.data, split.labels, threshold)


def _eval_auc(model, eval_split, threshold):
    if eval_split is None:
        return None
    return evaluate_model(model, eval_split, threshold).auc


# ---------------------------------------------------------------------------
# phase 1: supervised training on a labeled split
# ---------------------------------------------------------------------------

def pretrain_source(model: ModelBundle, source: LabeledSplit, config: TrainConfig,
                    eval_split: LabeledSplit | None = None, epochs: int | None = None,
                    start_epoch: int = 0, phase: str = "pretrain",
                    loss_config: LossConfig | None = None) -> TrainLog:
    """Minimize classification loss of classifier(extractor(x)) on a labeled split.

    Plain cross entropy unless ``loss_config`` is given.  Also serves the two
    cnn baselines (with ``phase="supervised"`` and all epochs).
    """
    if source.labels.min() == source.labels.max():
        raise DataError("labeled split contains a single class; loss is degenerate")
    epochs = config.epochs if epochs is None else epochs
    names = model.generator_param_names()
    log = TrainLog()
    for e in range(epochs):
        t0 = time.perf_counter()
        total, batches = 0.0, 0
        for batch in batch_iter(source, config.batch_size, config.seed, start_epoch + e):
            probs = model.classifier.forward(model.extractor.forward(batch.features))
            if loss_config is None:
                loss = cross_entropy(probs, batch.labels)
            else:
                loss = weighted_focal_loss(probs, batch.labels, loss_config)
            total += _require_finite(loss.item(), "classification loss")
            batches += 1
            _step_params(model, loss, names, config, config.lr)
        log.append(EpochRecord(
            epoch=start_epoch + e, phase=phase,
            cls_loss=total / max(batches, 1), w_estimate=0.0, grad_penalty=0.0,
            eval_auc=_eval_auc(model, eval_split, config.eval_threshold),
            wall_clock=time.perf_counter() - t0))
    return log


# ---------------------------------------------------------------------------
# phase 2: alternating adversarial optimization
# ---------------------------------------------------------------------------

def adversarial_train(model: ModelBundle, source: LabeledSplit,
                      target_features: np.ndarray, config: TrainConfig,
                      eval_split: LabeledSplit | None = None,
                      epochs: int | None = None, start_epoch: int = 0) -> TrainLog:
    """Alternate critic ascent and generator descent for the adversarial modes."""
    if config.mode not in ADVERSARIAL_MODES:
        raise ValueError(f"adversarial_train does not handle mode {config.mode!r}")
    if config.batch_size > min(source.n, len(target_features)):
        raise ValueError(
            f"batch_size {config.batch_size} exceeds a domain split "
            f"(source {source.n}, target {len(target_features)})")

    epochs = config.epochs if epochs is None else epochs
    loss_cfg = config.loss
    if config.mode == "wd_wada":
        if loss_cfg.alpha_pos is None:
            loss_cfg = loss_cfg.with_alpha_from(source.labels)
    else:
        # wd_ada ablation and the dann baseline train with plain cross entropy
        loss_cfg = replace(loss_cfg, gamma=0.0, alpha_pos=1.0)

    gen_names = model.generator_param_names()
    critic_names = model.critic_param_names()
    critic = model.critic
    interp_rng = np.random.default_rng([config.seed, 0x9E3779B9])

    log = TrainLog()
    for e in range(epochs):
        t0 = time.perf_counter()
        epoch = start_epoch + e
        tgt_batches = list(batch_iter(target_features, config.batch_size,
                                      config.seed + 1, epoch))
        # dedicated streams for the domain player: each critic step sees a
        # fresh pair instead of grinding the generator's batch n_critic times
        critic_src = list(batch_iter(source, config.batch_size, config.seed + 2, epoch))
        critic_tgt = list(batch_iter(target_features, config.batch_size,
                                     config.seed + 3, epoch))
        draw = 0
        sums = {"cls": 0.0, "wd": 0.0, "gp": 0.0}
        steps = 0
        for i, src_batch in enumerate(batch_iter(source, config.batch_size,
                                                 config.seed, epoch)):
            tgt_batch = tgt_batches[i % len(tgt_batches)]

            # (a) domain player, extractor frozen: features computed off-tape
            for _ in range(config.n_critic):
                with no_grad():
                    zs = model.extractor.forward(
                        critic_src[draw % len(critic_src)].features).data
                    zt = model.extractor.forward(
                        critic_tgt[draw % len(critic_tgt)]).data
                draw += 1
                s_scores = critic.forward(Tensor(zs))
                t_scores = critic.forward(Tensor(zt))
                if config.mode == "dann":
                    critic_loss = _domain_bce(s_scores, t_scores)
                    sums["wd"] += _require_finite(
                        float(t_scores.data.mean() - s_scores.data.mean()),
                        "score gap")
                else:
                    l_wd = wasserstein_objective(t_scores, s_scores)
                    mix = interpolate_pairs(
                        critic.penalty_rep(Tensor(zs)),
                        critic.penalty_rep(Tensor(zt)), interp_rng)
                    l_gp = gradient_penalty(critic, mix)
                    payoff = adversarial_objective(l_wd, l_gp, loss_cfg)
                    critic_loss = -payoff  # ascend the payoff
                    sums["wd"] += _require_finite(l_wd.item(), "wasserstein estimate")
                    sums["gp"] += _require_finite(l_gp.item(), "gradient penalty")
                _step_params(model, critic_loss, critic_names, config, config.critic_lr)

            # (b) generator step, critic frozen
            zs_live = model.extractor.forward(src_batch.features)
            probs = model.classifier.forward(zs_live)
            cls_loss = weighted_focal_loss(probs, src_batch.labels, loss_cfg)
            if loss_cfg.lambda_domain == 0.0:
                gen_loss = cls_loss  # domain term dead; keep the graph lean
            else:
                zt_live = model.extractor.forward(tgt_batch)
                if config.mode == "dann":
                    domain_term = -_domain_bce(critic.forward(zs_live),
                                               critic.forward(zt_live))
                else:
                    domain_term = wasserstein_objective(critic.forward(zt_live),
                                                        critic.forward(zs_live))
                gen_loss = cls_loss + loss_cfg.lambda_domain * domain_term
            sums["cls"] += _require_finite(cls_loss.item(), "classification loss")
            steps += 1
            _step_params(model, gen_loss, gen_names, config, config.lr)

        denom = max(steps, 1)
        log.append(EpochRecord(
            epoch=epoch, phase="adversarial",
            cls_loss=sums["cls"] / denom,
            w_estimate=sums["wd"] / max(denom * config.n_critic, 1),
            grad_penalty=sums["gp"] / max(denom * config.n_critic, 1),
            eval_auc=_eval_auc(model, eval_split, config.eval_threshold),
            wall_clock=time.perf_counter() - t0))
    return log


def _domain_bce(source_scores: Tensor, target_scores: Tensor) -> Tensor:
    """Logistic domain-classifier loss: source labeled 1, target labeled 0."""
    ps = sigmoid(source_scores)
    pt = sigmoid(target_scores)
    return -(tmean(log(ps)) + tmean(log(1.0 - pt))) * 0.5


# ---------------------------------------------------------------------------
# standalone critic fitting (distance estimation between two samples)
# ---------------------------------------------------------------------------

def fit_critic_distance(sample_a: np.ndarray, sample_b: np.ndarray, *,
                        steps: int = 600, batch_size: int = 256, lr: float = 5e-3,
                        rho: float = 10.0, seed: int = 0) -> float:
    """Train only a critic to estimate transport distance mean(b) - mean(a).

    Runs the critic-side loop in isolation (no extractor, no classifier) and
    returns the penalized critic's final full-sample score gap.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    store = ParamStore()
    rng = np.random.default_rng(seed)
    critic = DomainCritic(a.shape[1], store, rng=rng)
    opt = OptimizerConfig()
    cfg = LossConfig(rho=rho, alpha_pos=1.0)
    interp_rng = np.random.default_rng([seed, 1])
    names = critic.param_names()
    for step in range(steps):
        ia = rng.integers(0, len(a), size=min(batch_size, len(a)))
        ib = rng.integers(0, len(b), size=min(batch_size, len(b)))
        sa = critic.forward(Tensor(a[ia]))
        sb = critic.forward(Tensor(b[ib]))
        l_wd = wasserstein_objective(sb, sa)
        mix = interpolate_pairs(b[ib], a[ia], interp_rng)
        l_gp = gradient_penalty(critic, mix)
        loss = -adversarial_objective(l_wd, l_gp, cfg)
        if not np.isfinite(loss.item()):
            raise TrainingDiverged("critic objective became non-finite")
        gs = grad(loss, [store[n] for n in names])
        optimizer_step(store, dict(zip(names, gs)), opt, lr)
    with no_grad():
        gap = critic.forward(Tensor(b)).data.mean() - critic.forward(Tensor(a)).data.mean()
    return float(gap)


# ---------------------------------------------------------------------------
# mode dispatch
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    model: ModelBundle
    log: TrainLog
    report: metrics_mod.MetricsReport


def run_mode(dataset: DomainDataset, config: TrainConfig,
             arch: ArchConfig | None = None,
             target_baseline: LabeledSplit | None = None,
             eval_during_training: bool = True) -> RunResult:
    """Train one model per ``config.mode`` and evaluate it on target_test."""
    model = init_model(config.seed, arch)
    eval_split = dataset.target_test if eval_during_training else None

    if config.mode == "source_only_cnn":
        log = pretrain_source(model, dataset.source_train, config,
                              eval_split=eval_split, phase="supervised")
    elif config.mode == "target_only_cnn":
        if target_baseline is None:
            raise DataError(
                "target_only_cnn needs the labeled target baseline split "
                "(see data.make_target_baseline)")
        log = pretrain_source(model, target_baseline, config,
                              eval_split=eval_split, phase="supervised")
    else:
        pre, adv = config.split_epochs()
        log = pretrain_source(model, dataset.source_train, config,
                              eval_split=eval_split, epochs=pre)
        if adv > 0:
            log.extend(adversarial_train(
                model, dataset.source_train, dataset.target_train, config,
                eval_split=eval_split, epochs=adv, start_epoch=pre))

    report = evaluate_model(model, dataset.target_test, config.eval_threshold)
    return RunResult(model=model, log=log, report=report)
