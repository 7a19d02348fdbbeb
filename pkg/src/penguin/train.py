"""Parameter store, reverse-mode gradients, AdamW and the early-stopped training loop."""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .flow import cfm_loss, draw_noise
from .network import ModelConfig, PenguinModel

log = logging.getLogger(__name__)

ParamStore = dict  # name -> torch.Tensor, in registration order


class TrainingError(FloatingPointError):
    pass


def param_store(model: torch.nn.Module) -> ParamStore:
    return dict(model.named_parameters())


def gradient(loss_fn, params: ParamStore) -> dict[str, torch.Tensor]:
    """Evaluate ``loss_fn()`` and backpropagate to every tensor in ``params``.

    Parameters the loss does not touch receive zero gradients.
    """
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss.item()}")
    tensors = list(params.values())
    if loss.requires_grad:
        grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    else:
        grads = [None] * len(tensors)
    out = {}
    for (name, p), g in zip(params.items(), grads):
        g = torch.zeros_like(p) if g is None else g
        if not torch.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for parameter {name}")
        out[name] = g
    return out


def clip_grad_norm(grads: dict[str, torch.Tensor], max_norm: float | None) -> float:
    total = math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads.values()))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for g in grads.values():
            g.mul_(scale)
    return total


@dataclass
class AdamWState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@torch.no_grad()
def adamw_step(params: ParamStore, grads: dict[str, torch.Tensor], state: AdamWState) -> None:
    """One AdamW update in place, with decoupled weight decay."""
    state.step += 1
    bc1 = 1 - state.beta1 ** state.step
    bc2 = 1 - state.beta2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)} for {name}")
        m = state.m.setdefault(name, torch.zeros_like(p))
        v = state.v.setdefault(name, torch.zeros_like(p))
        m.mul_(state.beta1).add_(g, alpha=1 - state.beta1)
        v.mul_(state.beta2).addcmul_(g, g, value=1 - state.beta2)
        update = (m / bc1) / (torch.sqrt(v / bc2) + state.eps) + state.weight_decay * p
        p.sub_(state.lr * update)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 300
    patience: int = 10
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    seed: int = 0
    # applied to targets as (x - offset) / scale before training
    target_affine: tuple[float, float] = (1.0, 0.0)
    time_budget_s: float | None = None
    use_film: bool = True
    use_scale: bool = True
    use_ppg_cond: bool = True


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    seconds: float


HISTORY_HEADER = "epoch,train_loss,val_loss,lr,seconds"


def history_csv(history: list[EpochRecord]) -> str:
    rows = [HISTORY_HEADER]
    rows += [f"{r.epoch},{r.train_loss:.8g},{r.val_loss:.8g},{r.lr:.8g},{r.seconds:.3f}" for r in history]
    return "\n".join(rows) + "\n"


class EarlyStopping:
    """Tracks the best validation loss; ``update`` returns True when training should stop."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        if val_loss < self.best:
            self.best, self.best_epoch, self.bad_epochs = val_loss, epoch, 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience

    @property
    def improved_last(self) -> bool:
        return self.bad_epochs == 0


def _as_arrays(pairs):
    if isinstance(pairs, tuple) and len(pairs) == 2:
        ppg, target = pairs
    else:
        ppg = np.stack([p.ppg for p in pairs])
        target = np.stack([p.target for p in pairs])
    return torch.as_tensor(np.asarray(ppg, dtype=np.float32)), torch.as_tensor(np.asarray(target, dtype=np.float32))


def normalize_targets(x1: torch.Tensor, affine) -> torch.Tensor:
    scale, offset = affine
    if (scale, offset) == (1.0, 0.0):
        return x1
    return (x1 - offset) / scale


@torch.no_grad()
def evaluate_loss(model, ppg, target, noise, batch_size: int) -> float:
    total, n = 0.0, 0
    t_all, x0_all = noise
    for lo in range(0, len(ppg), batch_size):
        sl = slice(lo, lo + batch_size)
        loss = cfm_loss(model, target[sl], ppg[sl], noise=(t_all[sl], x0_all[sl]))
        total += float(loss) * len(target[sl])
        n += len(target[sl])
    return total / n


def train(model: PenguinModel, train_pairs, val_pairs, cfg: TrainConfig, on_epoch=None):
    """Fit ``model`` with the flow-matching loss; returns ``(best_state, history)``.

    ``best_state`` is a copy of the parameters from the epoch with the lowest
    validation loss. Validation reuses one frozen set of ``(t, x0)`` draws so
    losses are comparable across epochs.
    """
    z_tr, x_tr = _as_arrays(train_pairs)
    z_va, x_va = _as_arrays(val_pairs)
    if len(z_tr) == 0 or len(z_va) == 0:
        raise ValueError("train and validation sets must be non-empty")
    x_tr = normalize_targets(x_tr, cfg.target_affine)
    x_va = normalize_targets(x_va, cfg.target_affine)
    val_noise = draw_noise(tuple(x_va.shape), seed=cfg.seed + 7919)

    params = param_store(model)
    state = AdamWState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    stopper = EarlyStopping(cfg.patience)
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    history: list[EpochRecord] = []
    started = time.perf_counter()
    N = len(z_tr)
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        model.train()
        perm = torch.from_numpy(np.random.default_rng([cfg.seed, epoch]).permutation(N))
        gen = torch.Generator().manual_seed(cfg.seed * 1_000_003 + epoch)
        running, seen = 0.0, 0
        for b, lo in enumerate(range(0, N, cfg.batch_size)):
            idx = perm[lo:lo + cfg.batch_size]
            batch_losses = []

            def loss_fn():
                loss = cfm_loss(model, x_tr[idx], z_tr[idx], gen)
                batch_losses.append(float(loss.detach()))
                return loss

            try:
                grads = gradient(loss_fn, params)
            except FloatingPointError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from exc
            clip_grad_norm(grads, cfg.grad_clip)
            adamw_step(params, grads, state)
            running += batch_losses[0] * len(idx)
            seen += len(idx)
        model.eval()
        val = evaluate_loss(model, z_va, x_va, val_noise, cfg.batch_size)
        if not math.isfinite(val):
            raise TrainingError(f"epoch {epoch}: non-finite validation loss")
        rec = EpochRecord(epoch, running / seen, val, cfg.lr, time.perf_counter() - t0)
        history.append(rec)
        stop = stopper.update(epoch, val)
        if stopper.improved_last:
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        log.info("epoch %d train %.5f val %.5f (%.1fs)", epoch, rec.train_loss, val, rec.seconds)
        if on_epoch is not None:
            on_epoch(rec)
        if stop:
            break
        if cfg.time_budget_s is not None and time.perf_counter() - started >= cfg.time_budget_s:
            log.info("time budget reached after epoch %d", epoch)
            break
    return best_state, history


def ablation_variants(cfg: TrainConfig) -> list[TrainConfig]:
    """Full model plus the three single-flag ablations, in table order."""
    full = dataclasses.replace(cfg, use_film=True, use_scale=True, use_ppg_cond=True)
    return [full,
            dataclasses.replace(full, use_film=False),
            dataclasses.replace(full, use_scale=False),
            dataclasses.replace(full, use_ppg_cond=False)]


def model_config_for(train_cfg: TrainConfig, base: ModelConfig) -> ModelConfig:
    return dataclasses.replace(base, use_film=train_cfg.use_film, use_scale=train_cfg.use_scale,
                               use_ppg_cond=train_cfg.use_ppg_cond)
