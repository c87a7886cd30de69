"""Adam training loop with A-softmax loss and dev-EER model selection."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .dataio import FeatureSet
from .metrics import eer_from_scores
from .model import ModelConfig, SRLARes2Net, cm_score

log = logging.getLogger(__name__)

LAMBDA_MAX = 1000.0
LAMBDA_MIN = 5.0


class NumericError(ArithmeticError):
    """Training produced a non-finite value."""


class TrainConfigError(ValueError):
    pass


@dataclass
class OptimizerConfig:
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    weight_decay: float = 1e-4
    epochs: int = 32
    batch_size: int = 32
    seed: int = 1
    balanced: bool = False

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise TrainConfigError("Adam betas must lie in (0, 1)")
        if self.eps <= 0 or self.learning_rate <= 0:
            raise TrainConfigError("eps and learning rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise TrainConfigError("epochs and batch size must be >= 1")


def adam_step(
    params: dict[str, torch.Tensor],
    grads: dict[str, torch.Tensor],
    state: dict,
    cfg: OptimizerConfig,
) -> None:
    """One in-place Adam update with bias correction and L2 weight decay folded into the gradient.

    ``state`` holds ``step`` and per-parameter ``m``/``v``; missing entries
    start at zero.
    """
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    state["step"] = step = state.get("step", 0) + 1
    m_all = state.setdefault("m", {})
    v_all = state.setdefault("v", {})
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1 - b1**step
    c2 = 1 - b2**step
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            if cfg.weight_decay:
                g = g + cfg.weight_decay * p
            m = m_all.setdefault(name, torch.zeros_like(p))
            v = v_all.setdefault(name, torch.zeros_like(p))
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            p.sub_(cfg.learning_rate * (m / c1) / ((v / c2).sqrt() + cfg.eps))


def loss_fn(scores: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy of (margin-adjusted) class scores."""
    if labels.dim() != 1 or labels.shape[0] != scores.shape[0]:
        raise ValueError(f"labels shape {tuple(labels.shape)} does not match scores {tuple(scores.shape)}")
    if bool(((labels < 0) | (labels >= scores.shape[1])).any()):
        raise ValueError(f"labels must be in [0, {scores.shape[1]})")
    return F.cross_entropy(scores, labels)


def lambda_schedule(iteration: int) -> float:
    return max(LAMBDA_MIN, LAMBDA_MAX / (1 + 0.1 * iteration))


def configure_determinism(deterministic: bool, threads: int | None = None) -> None:
    if deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
    elif threads:
        torch.set_num_threads(threads)


@torch.no_grad()
def score(model: SRLARes2Net, data: FeatureSet, batch_size: int = 64) -> np.ndarray:
    """CM scores (bonafide minus spoof) in protocol order, eval mode."""
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    out = []
    for i in range(0, len(data), batch_size):
        x = torch.from_numpy(data.features[i : i + batch_size]).unsqueeze(1).to(dtype)
        out.append(cm_score(model(x)).double().numpy())
    model.train(was_training)
    return np.concatenate(out)


def dataset_eer(model: SRLARes2Net, data: FeatureSet) -> float:
    s = score(model, data)
    return eer_from_scores(s[data.labels == 0], s[data.labels == 1])[0]


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    dev_eer: float
    batch_losses: list[float] = field(default_factory=list, repr=False)

    def line(self) -> str:
        return f"epoch {self.epoch} loss {float(self.loss)!r} dev_eer {float(self.dev_eer)!r}"


@dataclass
class TrainResult:
    model: SRLARes2Net
    best_epoch: int
    best_dev_eer: float
    history: list[EpochRecord]
    optimizer_state: dict

    def log_text(self) -> str:
        return "".join(r.line() + "\n" for r in self.history)


def _check_dataset(data: FeatureSet, what: str) -> None:
    if len(data) == 0:
        raise TrainConfigError(f"{what} set is empty")
    if len(np.unique(data.labels)) < 2:
        raise TrainConfigError(f"{what} set must contain both bonafide and spoof items")


def _epoch_order(labels: np.ndarray, cfg: OptimizerConfig, gen: torch.Generator) -> torch.Tensor:
    n = len(labels)
    if not cfg.balanced:
        return torch.randperm(n, generator=gen)
    counts = np.bincount(labels, minlength=2)
    weights = torch.from_numpy(1.0 / counts[labels])
    return torch.multinomial(weights, n, replacement=True, generator=gen)


def train(
    train_set: FeatureSet,
    dev_set: FeatureSet,
    model_cfg: ModelConfig,
    opt_cfg: OptimizerConfig,
    log_path: str | Path | None = None,
) -> TrainResult:
    """Train for ``opt_cfg.epochs`` epochs and keep the weights with the lowest dev EER.

    Ties on dev EER keep the earlier epoch. The per-epoch log line is
    ``epoch <n> loss <mean batch loss> dev_eer <eer>``.
    """
    _check_dataset(train_set, "training")
    _check_dataset(dev_set, "development")
    torch.manual_seed(opt_cfg.seed)
    model = SRLARes2Net(model_cfg)
    gen = torch.Generator().manual_seed(opt_cfg.seed)
    params = dict(model.named_parameters())
    state: dict = {}
    feats = torch.from_numpy(train_set.features).unsqueeze(1)
    labels = torch.from_numpy(train_set.labels)

    history: list[EpochRecord] = []
    best = (math.inf, 0, None)
    iteration = 0
    log_fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(1, opt_cfg.epochs + 1):
            model.train()
            order = _epoch_order(train_set.labels, opt_cfg, gen)
            batch_losses = []
            for i in range(0, len(order), opt_cfg.batch_size):
                idx = order[i : i + opt_cfg.batch_size]
                model.head.lam = lambda_schedule(iteration)
                y = labels[idx]
                loss = loss_fn(model(feats[idx], y), y)
                if not torch.isfinite(loss):
                    raise NumericError(f"non-finite loss at epoch {epoch}, batch {i // opt_cfg.batch_size}")
                grads = torch.autograd.grad(loss, list(params.values()))
                adam_step(params, dict(zip(params, grads)), state, opt_cfg)
                batch_losses.append(loss.item())
                iteration += 1
            dev_eer = dataset_eer(model, dev_set)
            rec = EpochRecord(epoch, float(np.mean(batch_losses)), dev_eer, batch_losses)
            history.append(rec)
            log.info(rec.line())
            if log_fh:
                log_fh.write(rec.line() + "\n")
                log_fh.flush()
            if dev_eer < best[0]:
                best = (dev_eer, epoch, copy.deepcopy(model.state_dict()))
    finally:
        if log_fh:
            log_fh.close()

    final_lam = model.head.lam
    model.load_state_dict(best[2])
    model.head.lam = final_lam
    model.eval()
    return TrainResult(model, best[1], best[0], history, state)


def run_meta(opt_cfg: OptimizerConfig, result: TrainResult | None = None) -> dict:
    meta = {"optimizer": asdict(opt_cfg)}
    if result is not None:
        meta.update(best_epoch=result.best_epoch, best_dev_eer=result.best_dev_eer)
    return meta
