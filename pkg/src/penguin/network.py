"""Velocity network: conv embeddings, dual-stream Flow-SSM blocks and output head."""

from __future__ import annotations

from dataclasses import dataclass, fields, asdict

import torch
import torch.nn.functional as F
from torch import nn

from .ssm import S5Layer


@dataclass
class ModelConfig:
    depth: int = 4
    embed_dim: int = 128
    state_dim: int = 256
    window: int = 1024
    ffn_expansion: int = 2
    temb_dim: int = 128
    use_film: bool = True
    use_scale: bool = True
    use_ppg_cond: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("depth", "embed_dim", "state_dim", "window", "ffn_expansion", "temb_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"model.{name} must be positive")
        if self.embed_dim < 2 or self.state_dim < 2 or self.state_dim % 2:
            raise ValueError("embed_dim must be >= 2 and state_dim even and >= 2")
        if self.temb_dim % 2:
            raise ValueError("temb_dim must be even")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def sinusoidal_encode(t, dim: int) -> torch.Tensor:
    """Interleaved sin/cos features of the flow time, ``t`` scaled by 1000.

    ``t`` may be a float or a tensor of shape (B,); the result has a trailing
    axis of length ``dim``.
    """
    if dim % 2:
        raise ValueError(f"encoding dim must be even, got {dim}")
    t = torch.as_tensor(t, dtype=torch.get_default_dtype() if not torch.is_tensor(t) else t.dtype)
    i = torch.arange(dim // 2, dtype=t.dtype)
    freqs = 10000.0 ** (-2.0 * i / dim)
    arg = (t[..., None] * 1000.0) * freqs
    return torch.stack([torch.sin(arg), torch.cos(arg)], dim=-1).flatten(-2)


def film_modulate(h: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    """``gamma * h + beta`` per feature, broadcast over time.

    ``h`` is (..., K, n) and ``gamma``/``beta`` are (..., n).
    """
    if gamma.shape[-1] != h.shape[-1] or beta.shape[-1] != h.shape[-1]:
        raise ValueError(f"FiLM shapes disagree: h {tuple(h.shape)}, gamma {tuple(gamma.shape)}, "
                         f"beta {tuple(beta.shape)}")
    return gamma.unsqueeze(-2) * h + beta.unsqueeze(-2)


class FeedForward(nn.Module):
    def __init__(self, n: int, expansion: int):
        super().__init__()
        self.fc1 = nn.Linear(n, expansion * n)
        self.fc2 = nn.Linear(expansion * n, n)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class FlowSSMBlock(nn.Module):
    """One dual-stream block.

    x-stream: norm -> FiLM(t) -> (+ projected PPG features) -> S5 -> alpha(t) scale,
    then a pre-norm FFN. z-stream: norm -> S5 and a pre-norm FFN, both residual.
    """

    def __init__(self, cfg: ModelConfig, generator=None):
        super().__init__()
        n, m = cfg.embed_dim, cfg.state_dim
        self.cfg = cfg
        self.norm_x = nn.LayerNorm(n, elementwise_affine=False)
        self.film = nn.Linear(cfg.temb_dim, 2 * n)
        self.s5_x = S5Layer(n, m, generator)
        self.scale = nn.Linear(cfg.temb_dim, n)
        self.norm_x_ffn = nn.LayerNorm(n)
        self.ffn_x = FeedForward(n, cfg.ffn_expansion)

        self.norm_z = nn.LayerNorm(n)
        self.s5_z = S5Layer(n, m, generator)
        self.norm_z_ffn = nn.LayerNorm(n)
        self.ffn_z = FeedForward(n, cfg.ffn_expansion)
        self.cond_proj = nn.Linear(n, n)

    def modulation(self, temb: torch.Tensor):
        """Return (gamma, beta, alpha) for the given time embedding, honoring ablation flags."""
        n = self.cfg.embed_dim
        if self.cfg.use_film:
            d_gamma, beta = self.film(temb).split(n, dim=-1)
            gamma = 1.0 + d_gamma
        else:
            gamma = torch.ones(*temb.shape[:-1], n, dtype=temb.dtype)
            beta = torch.zeros(*temb.shape[:-1], n, dtype=temb.dtype)
        alpha = 1.0 + self.scale(temb) if self.cfg.use_scale else None
        return gamma, beta, alpha

    def forward(self, hx, hz, temb):
        gamma, beta, alpha = self.modulation(temb)
        zn = self.norm_z(hz)
        a = film_modulate(self.norm_x(hx), gamma, beta)
        if self.cfg.use_ppg_cond:
            a = a + self.cond_proj(zn)
        s = self.s5_x(a)
        if alpha is not None:
            s = alpha.unsqueeze(-2) * s
        hx = hx + s
        hx = hx + self.ffn_x(self.norm_x_ffn(hx))

        hz = hz + self.s5_z(zn)
        hz = hz + self.ffn_z(self.norm_z_ffn(hz))
        return hx, hz


def block_forward(block: FlowSSMBlock, hx, hz, temb):
    """Features-by-time wrapper: ``hx``, ``hz`` are (..., n, K)."""
    ox, oz = block(hx.transpose(-1, -2), hz.transpose(-1, -2), temb)
    return ox.transpose(-1, -2), oz.transpose(-1, -2)


class TimeEmbedding(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.fc1 = nn.Linear(dim, dim)
        self.fc2 = nn.Linear(dim, dim)

    def forward(self, t):
        return self.fc2(F.gelu(self.fc1(sinusoidal_encode(t, self.dim).to(self.fc1.weight.dtype))))


class PenguinModel(nn.Module):
    """Predicts the flow velocity for a noisy vital-sign window given its PPG window."""

    KERNEL = 7

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        g = torch.Generator().manual_seed(cfg.seed)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            n = cfg.embed_dim
            self.x_embed = nn.Conv1d(1, n, self.KERNEL, padding=self.KERNEL // 2)
            self.z_embed = nn.Conv1d(1, n, self.KERNEL, padding=self.KERNEL // 2)
            self.temb = TimeEmbedding(cfg.temb_dim)
            self.blocks = nn.ModuleList(FlowSSMBlock(cfg, g) for _ in range(cfg.depth))
            self.head_norm = nn.LayerNorm(n)
            self.head = nn.Linear(n, 1)

    def forward(self, x_t: torch.Tensor, z: torch.Tensor, t) -> torch.Tensor:
        """``x_t`` and ``z`` are (B, K) or (K,); ``t`` is a float or (B,) tensor."""
        if x_t.shape != z.shape:
            raise ValueError(f"x_t shape {tuple(x_t.shape)} != z shape {tuple(z.shape)}")
        squeeze = x_t.dim() == 1
        if squeeze:
            x_t, z = x_t[None], z[None]
        B = x_t.shape[0]
        t = torch.as_tensor(t, dtype=x_t.dtype)
        if t.dim() == 0:
            t = t.expand(B)
        temb = self.temb(t)
        hx = self.x_embed(x_t[:, None, :]).transpose(1, 2)  # (B, K, n)
        hz = self.z_embed(z[:, None, :]).transpose(1, 2)
        for block in self.blocks:
            hx, hz = block(hx, hz, temb)
        out = self.head(self.head_norm(hx)).squeeze(-1)
        return out[0] if squeeze else out


def model_forward(model: PenguinModel, x_t, z, t):
    return model(x_t, z, t)


def parameter_family(name: str) -> str:
    """Coarse grouping of parameter names used by the gradient check report."""
    leaf = name.rsplit(".", 1)[-1]
    if "embed" in name and "temb" not in name:
        return "conv"
    if name.startswith("temb."):
        return "temb"
    if ".film." in name:
        return "film"
    if ".scale." in name:
        return "scale"
    if ".s5_" in name:
        return {"lambda_re_log": "lambda", "lambda_im": "lambda", "log_delta": "delta",
                "b_re": "B", "b_im": "B", "c_re": "C", "c_im": "C", "d_skip": "D"}[leaf]
    if ".ffn_" in name:
        return "ffn"
    if ".cond_proj." in name:
        return "cond_proj"
    if name.startswith("head") or ".norm" in name:
        return "head/norm"
    return "other"


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def zero_(model: nn.Module) -> nn.Module:
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
    return model


def seeded_random_(model: nn.Module, seed: int, std: float = 0.2) -> nn.Module:
    """Overwrite every parameter with seeded noise (used by sensitivity tests)."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("lambda_re_log") or name.endswith("log_delta"):
                continue
            p.copy_(torch.randn(p.shape, generator=g, dtype=torch.float64).to(p.dtype) * std
                    + (1.0 if name.endswith(("d_skip",)) else 0.0))
    return model

