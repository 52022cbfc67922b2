"""Actor and critic networks.

Training runs in float32; the export path casts weights to float64, which is
lossless, and parity with the consumer's float64 inference is checked by
evaluating the actor in double precision.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0


def mlp(sizes: list[int]) -> nn.Sequential:
    layers: list[nn.Module] = []
    for w_in, w_out in zip(sizes[:-1], sizes[1:]):
        layers.append(nn.Linear(w_in, w_out))
        layers.append(nn.Tanh())
    return nn.Sequential(*layers)


class SquashedGaussianActor(nn.Module):
    """tanh-squashed Gaussian policy; the deterministic action is tanh(mean),
    which is exactly what the portable weight format encodes."""

    def __init__(self, obs_dim: int, act_dim: int, width: int, n_layers: int = 2):
        super().__init__()
        sizes = [obs_dim] + [width] * n_layers
        self.trunk = mlp(sizes)
        self.mean_head = nn.Linear(width, act_dim)
        self.log_std_head = nn.Linear(width, act_dim)

    def forward(self, obs: torch.Tensor):
        h = self.trunk(obs)
        mean = self.mean_head(h)
        log_std = torch.clamp(self.log_std_head(h), LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std

    def sample(self, obs: torch.Tensor):
        mean, log_std = self(obs)
        std = log_std.exp()
        normal = torch.distributions.Normal(mean, std)
        pre_tanh = normal.rsample()
        action = torch.tanh(pre_tanh)
        log_prob = normal.log_prob(pre_tanh) - torch.log1p(-action.pow(2) + 1e-7)
        return action, log_prob.sum(dim=-1, keepdim=True)

    def log_prob_of(self, obs: torch.Tensor, pre_tanh: torch.Tensor):
        mean, log_std = self(obs)
        normal = torch.distributions.Normal(mean, log_std.exp())
        action = torch.tanh(pre_tanh)
        log_prob = normal.log_prob(pre_tanh) - torch.log1p(-action.pow(2) + 1e-7)
        entropy = normal.entropy().sum(dim=-1)
        return log_prob.sum(dim=-1), entropy

    @torch.no_grad()
    def deterministic(self, obs: torch.Tensor) -> torch.Tensor:
        mean, _ = self(obs)
        return torch.tanh(mean)

    def export_layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(weight, bias) pairs reproducing tanh(mean) when tanh follows
        every layer, matching the portable file's evaluation rule."""
        out = []
        for module in self.trunk:
            if isinstance(module, nn.Linear):
                out.append(
                    (
                        module.weight.detach().cpu().numpy().astype(np.float64),
                        module.bias.detach().cpu().numpy().astype(np.float64),
                    )
                )
        out.append(
            (
                self.mean_head.weight.detach().cpu().numpy().astype(np.float64),
                self.mean_head.bias.detach().cpu().numpy().astype(np.float64),
            )
        )
        return out


class EnsembleLinear(nn.Module):
    """One Linear applied per ensemble member via a single batched matmul."""

    def __init__(self, n_members: int, in_features: int, out_features: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(n_members, in_features, out_features))
        self.bias = nn.Parameter(torch.empty(n_members, 1, out_features))
        bound = 1.0 / math.sqrt(in_features)
        nn.init.uniform_(self.weight, -bound, bound)
        nn.init.uniform_(self.bias, -bound, bound)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (members, batch, in) -> (members, batch, out)
        return torch.baddbmm(self.bias, x, self.weight)


class QuantileCriticEnsemble(nn.Module):
    """n_critics quantile heads over (obs, action), evaluated in one bmm stack."""

    def __init__(self, obs_dim: int, act_dim: int, width: int, n_critics: int,
                 n_quantiles: int, n_layers: int = 2):
        super().__init__()
        self.n_critics = n_critics
        self.n_quantiles = n_quantiles
        dims = [obs_dim + act_dim] + [width] * n_layers
        self.hidden = nn.ModuleList(
            EnsembleLinear(n_critics, d_in, d_out)
            for d_in, d_out in zip(dims[:-1], dims[1:])
        )
        self.head = EnsembleLinear(n_critics, width, n_quantiles)

    def forward(self, obs: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        x = torch.cat([obs, action], dim=-1)
        x = x.unsqueeze(0).expand(self.n_critics, -1, -1)
        for layer in self.hidden:
            x = torch.tanh(layer(x))
        return self.head(x).permute(1, 0, 2)  # (batch, critics, quantiles)


class ValueCritic(nn.Module):
    def __init__(self, obs_dim: int, width: int, n_layers: int = 2):
        super().__init__()
        self.net = nn.Sequential(mlp([obs_dim] + [width] * n_layers), nn.Linear(width, 1))

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        return self.net(obs).squeeze(-1)


def polyak_update(target: nn.Module, source: nn.Module, tau: float) -> None:
    with torch.no_grad():
        for t, s in zip(target.parameters(), source.parameters()):
            t.mul_(1.0 - tau).add_(s, alpha=tau)


def quantile_taus(n_quantiles: int) -> torch.Tensor:
    return (torch.arange(n_quantiles, dtype=torch.float32) + 0.5) / n_quantiles


def quantile_huber_loss(pred: torch.Tensor, target: torch.Tensor, taus: torch.Tensor) -> torch.Tensor:
    """pred: (B, C, Q); target: (B, T); asymmetric Huber with kappa = 1."""
    diff = target[:, None, None, :] - pred[:, :, :, None]  # (B, C, Q, T)
    abs_diff = diff.abs()
    huber = torch.where(abs_diff <= 1.0, 0.5 * diff.pow(2), abs_diff - 0.5)
    weight = (taus[None, None, :, None] - (diff.detach() < 0.0).float()).abs()
    return (weight * huber).mean()
