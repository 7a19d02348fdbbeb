"""Diagonal S5 layer: ZOH discretization plus sequential and parallel linear scans.

States are stored as ``m/2`` complex values, one per conjugate pair; the
readout doubles the real part to account for the missing conjugates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn


@dataclass
class DiscreteS5:
    a_bar: torch.Tensor  # (P,) complex, diagonal of the transition matrix
    b_bar: torch.Tensor  # (P, n) complex


def discretize_zoh(lam: torch.Tensor, log_delta: torch.Tensor, b_in: torch.Tensor) -> DiscreteS5:
    """Zero-order hold: ``a = exp(delta*lam)``, ``b_bar = (a - 1)/lam * b``."""
    if bool((lam == 0).any()):
        raise ZeroDivisionError("ZOH discretization is undefined for a zero eigenvalue")
    delta = torch.exp(log_delta).to(lam.dtype)
    a_bar = torch.exp(delta * lam)
    # expm1 keeps b_bar accurate as delta -> 0
    b_bar = (_cexpm1(delta * lam) if lam.is_complex() else torch.special.expm1(delta * lam)) / lam
    return DiscreteS5(a_bar, b_bar[:, None] * b_in)


def _cexpm1(z: torch.Tensor) -> torch.Tensor:
    # exp(x+iy) - 1 = expm1(x) cos y + (cos y - 1) + i exp(x) sin y, without cancellation
    x, y = z.real, z.imag
    re = torch.special.expm1(x) * torch.cos(y) - 2 * torch.sin(y / 2) ** 2
    im = torch.exp(x) * torch.sin(y)
    return torch.complex(re, im)


def scan_sequential(a_bar: torch.Tensor, u: torch.Tensor) -> torch.Tensor:
    """Reference recurrence ``h_k = a * h_{k-1} + u_k`` along the last axis, ``h_0 = 0``.

    ``a_bar`` broadcasts against ``u[..., k]``.
    """
    h = torch.zeros_like(u[..., 0])
    out = []
    for k in range(u.shape[-1]):
        h = a_bar * h + u[..., k]
        out.append(h)
    if not out:
        return u.clone()
    return torch.stack(out, dim=-1)


def combine(e1, e2):
    """Associative operator for first-order linear recurrences (e1 earlier)."""
    a1, b1 = e1
    a2, b2 = e2
    return a2 * a1, a2 * b1 + b2


def scan_parallel(a_bar: torch.Tensor, u: torch.Tensor) -> torch.Tensor:
    """Same result as :func:`scan_sequential`, with log-depth recursion.

    Odd/even reduction: neighbouring pairs are combined, the half-length
    problem is solved recursively, and even positions are filled in from
    their odd predecessors. Total work stays O(K).
    """
    K = u.shape[-1]
    if K == 0:
        return u.clone()
    a = torch.as_tensor(a_bar, dtype=u.dtype)[..., None].expand(*u.shape)
    return _scan(a, u)


def _scan(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    K = b.shape[-1]
    if K == 1:
        return b
    a_even, a_odd = a[..., 0::2], a[..., 1::2]
    b_even, b_odd = b[..., 0::2], b[..., 1::2]
    m = K // 2
    a_pair, b_pair = combine((a_even[..., :m], b_even[..., :m]), (a_odd, b_odd))
    h_odd = _scan(a_pair, b_pair)
    # h[2i] = a[2i] h[2i-1] + b[2i] for i >= 1; h[0] = b[0]
    n_even = b_even.shape[-1]
    h_even = torch.cat([b_even[..., :1], a_even[..., 1:] * h_odd[..., :n_even - 1] + b_even[..., 1:]], dim=-1)
    h = torch.stack([h_even[..., :m], h_odd], dim=-1).reshape(*b.shape[:-1], 2 * m)
    if K % 2:
        h = torch.cat([h, h_even[..., m:]], dim=-1)
    return h


class S5Layer(nn.Module):
    """Continuous-time diagonal SSM mapping n features to n features.

    Parameters are kept as real tensors so checkpoints stay real-valued:
    ``Re(lambda) = -exp(lambda_re_log)`` which pins the real part negative.
    """

    def __init__(self, n: int, m: int, generator: torch.Generator | None = None):
        super().__init__()
        if m % 2 or m < 2 or n < 1:
            raise ValueError(f"state dim m must be even and >= 2 (got m={m}, n={n})")
        P = m // 2
        self.n, self.m = n, m
        g = generator
        self.lambda_re_log = nn.Parameter(torch.full((P,), math.log(0.5)))
        self.lambda_im = nn.Parameter(math.pi * torch.arange(P, dtype=torch.float32))
        self.b_re = nn.Parameter(torch.randn(P, n, generator=g) / math.sqrt(2 * m))
        self.b_im = nn.Parameter(torch.randn(P, n, generator=g) / math.sqrt(2 * m))
        self.c_re = nn.Parameter(torch.randn(n, P, generator=g) / math.sqrt(2 * n))
        self.c_im = nn.Parameter(torch.randn(n, P, generator=g) / math.sqrt(2 * n))
        self.d_skip = nn.Parameter(torch.ones(n))
        lo, hi = math.log(1e-3), math.log(1e-1)
        self.log_delta = nn.Parameter(lo + (hi - lo) * torch.rand(P, generator=g))
        self.parallel = True

    @property
    def lam(self) -> torch.Tensor:
        return torch.complex(-torch.exp(self.lambda_re_log), self.lambda_im)

    @property
    def b_in(self) -> torch.Tensor:
        return torch.complex(self.b_re, self.b_im)

    @property
    def c_out(self) -> torch.Tensor:
        return torch.complex(self.c_re, self.c_im)

    def discretize(self) -> DiscreteS5:
        return discretize_zoh(self.lam, self.log_delta, self.b_in)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """``x`` is (..., K, n) real; returns the same shape."""
        disc = self.discretize()
        xc = x.to(disc.b_bar.dtype)
        u = torch.einsum("...kn,pn->...pk", xc, disc.b_bar)
        scan = scan_parallel if self.parallel else scan_sequential
        h = scan(disc.a_bar, u)
        y = 2 * torch.einsum("...pk,np->...kn", h, self.c_out).real
        return y + self.d_skip * x


def init_s5(n: int, m: int, seed: int) -> S5Layer:
    """S4D-Lin initialization: ``lambda_j = -0.5 + i*pi*j``."""
    return S5Layer(n, m, torch.Generator().manual_seed(seed))


def s5_forward(layer: S5Layer, x_seq: torch.Tensor) -> torch.Tensor:
    """Apply ``layer`` to an ``n x K`` matrix (features by time)."""
    return layer(x_seq.transpose(-1, -2)).transpose(-1, -2)
