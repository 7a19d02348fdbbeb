"""Conditional flow matching on the straight noise-to-data path, and a Heun sampler."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


class IntegrationError(FloatingPointError):
    pass


@dataclass
class FlowSample:
    x0: torch.Tensor
    x1: torch.Tensor
    t: torch.Tensor
    xt: torch.Tensor
    u_target: torch.Tensor


@dataclass
class SamplerConfig:
    steps: int = 25
    seed: int = 0
    target_affine: tuple[float, float] = (1.0, 0.0)  # (scale, offset): x_out = scale * x + offset
    batch_size: int = 64

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"sampler steps must be >= 1, got {self.steps}")


def interpolate(x0, x1, t):
    """Point on the straight path and its velocity; ``t`` broadcasts over the last axis."""
    t = torch.as_tensor(t, dtype=x1.dtype)
    tt = t[..., None] if t.dim() else t
    return (1 - tt) * x0 + tt * x1, x1 - x0


def make_flow_sample(x1: torch.Tensor, generator: torch.Generator | None = None, t=None,
                     x0=None) -> FlowSample:
    """Draw ``t ~ U[0, 1]`` (one per row) and ``x0 ~ N(0, I)`` unless given."""
    x1 = torch.as_tensor(x1)
    if t is None:
        t = torch.rand(x1.shape[:-1], generator=generator, dtype=x1.dtype)
    if x0 is None:
        x0 = torch.randn(x1.shape, generator=generator, dtype=x1.dtype)
    t = torch.as_tensor(t, dtype=x1.dtype)
    xt, u = interpolate(x0, x1, t)
    return FlowSample(x0, x1, t, xt, u)


def cfm_loss(model, x1: torch.Tensor, z: torch.Tensor, generator: torch.Generator | None = None,
             noise: tuple[torch.Tensor, torch.Tensor] | None = None) -> torch.Tensor:
    """Mean squared error between the predicted and the straight-path velocity.

    ``x1`` and ``z`` are (B, K). ``noise`` optionally freezes ``(t, x0)``.
    """
    if x1.dim() != 2 or x1.shape[0] == 0:
        raise ValueError(f"expected a non-empty (B, K) batch, got shape {tuple(x1.shape)}")
    t, x0 = noise if noise is not None else (None, None)
    fs = make_flow_sample(x1, generator, t=t, x0=x0)
    pred = model(fs.xt, z, fs.t)
    if not torch.isfinite(pred).all():
        bad = (~torch.isfinite(pred)).nonzero()[0].tolist()
        raise FloatingPointError(f"model produced non-finite velocity at batch/position {bad}")
    return ((pred - fs.u_target) ** 2).mean()


def draw_noise(shape, seed: int, dtype=torch.float32):
    """Frozen ``(t, x0)`` draws, e.g. for a fixed validation loss."""
    g = torch.Generator().manual_seed(seed)
    t = torch.rand(shape[:-1], generator=g, dtype=torch.float64).to(dtype)
    x0 = torch.randn(shape, generator=g, dtype=torch.float64).to(dtype)
    return t, x0


@torch.no_grad()
def heun_integrate(model, x: torch.Tensor, z: torch.Tensor, steps: int) -> torch.Tensor:
    """Integrate ``dx/dt = u(x, t | z)`` from t=0 to 1 on a uniform grid with Heun's method."""
    dt = 1.0 / steps
    for i in range(steps):
        t0, t1 = i / steps, (i + 1) / steps
        u0 = model(x, z, t0)
        x_pred = x + dt * u0
        u1 = model(x_pred, z, t1)
        x = x + (dt / 2) * (u0 + u1)
        if not torch.isfinite(x).all():
            raise IntegrationError(f"non-finite state after Heun step {i}")
    return x


def _apply_affine(x, cfg: SamplerConfig):
    scale, offset = cfg.target_affine
    if (scale, offset) == (1.0, 0.0):
        return x
    return x * scale + offset


def _dtype(model, default):
    params = getattr(model, "parameters", None)
    if params is None:
        return default
    p = next(iter(params()), None)
    return default if p is None else p.dtype


def _prior(K: int, seed: int, dtype) -> torch.Tensor:
    g = torch.Generator().manual_seed(seed)
    return torch.randn(K, generator=g, dtype=torch.float64).to(dtype)


def heun_sample(model, z, cfg: SamplerConfig | None = None, seed: int | None = None) -> torch.Tensor:
    """Reconstruct one vital-sign window from its PPG window ``z`` (shape (K,))."""
    cfg = cfg or SamplerConfig()
    z = torch.as_tensor(z)
    dtype = _dtype(model, z.dtype)
    z = z.to(dtype)
    x0 = _prior(z.shape[-1], cfg.seed if seed is None else seed, dtype)
    x = heun_integrate(model, x0[None], z[None], cfg.steps)[0]
    return _apply_affine(x, cfg)


def reconstruct_windows(model, ppg_windows, cfg: SamplerConfig | None = None) -> list[np.ndarray]:
    """Sample every window; window ``i`` always uses prior seed ``cfg.seed + i``.

    Windows are integrated in batches of ``cfg.batch_size``; each row's prior
    is drawn from its own generator so results do not depend on batching
    beyond floating-point reduction order.
    """
    cfg = cfg or SamplerConfig()
    windows = [torch.from_numpy(np.array(w)) for w in ppg_windows]
    if not windows:
        return []
    dtype = _dtype(model, windows[0].dtype)
    K = windows[0].shape[-1]
    if any(w.shape != (K,) for w in windows):
        raise ValueError("all PPG windows must be 1-D with the same length")
    out = []
    for lo in range(0, len(windows), cfg.batch_size):
        chunk = windows[lo:lo + cfg.batch_size]
        z = torch.stack(chunk).to(dtype)
        x0 = torch.stack([_prior(K, cfg.seed + lo + j, dtype) for j in range(len(chunk))])
        x = _apply_affine(heun_integrate(model, x0, z, cfg.steps), cfg)
        out.extend(x.numpy().astype(np.float32))
    return out
