"""Policy and value networks.

The policy is a squashed Gaussian: an MLP produces mean and log-std, the
action is tanh of a Gaussian sample, and log-probabilities carry the tanh
change-of-variables correction.  Critics are plain MLPs on (obs, action).
"""
from __future__ import annotations

import torch
import torch.nn as nn

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0


def mlp(sizes, activation=nn.ReLU, out_activation=nn.Identity):
    layers = []
    for i in range(len(sizes) - 1):
        act = activation if i < len(sizes) - 2 else out_activation
        layers += [nn.Linear(sizes[i], sizes[i + 1]), act()]
    return nn.Sequential(*layers)


class SquashedGaussianPolicy(nn.Module):
    def __init__(self, obs_dim: int, act_dim: int, hidden=(64, 64, 64)):
        super().__init__()
        self.body = mlp([obs_dim, *hidden], out_activation=nn.ReLU)
        self.mu_head = nn.Linear(hidden[-1], act_dim)
        self.log_std_head = nn.Linear(hidden[-1], act_dim)

    def forward(self, obs: torch.Tensor, deterministic: bool = False,
                with_logprob: bool = True, generator=None):
        feat = self.body(obs)
        mu = self.mu_head(feat)
        log_std = torch.clamp(self.log_std_head(feat), LOG_STD_MIN, LOG_STD_MAX)
        std = torch.exp(log_std)
        if deterministic:
            u = mu
        else:
            noise = torch.randn(mu.shape, generator=generator, dtype=mu.dtype,
                                device=mu.device)
            u = mu + std * noise
        action = torch.tanh(u)
        if not with_logprob:
            return action, None
        # Gaussian log-density plus the tanh correction, written in the
        # numerically stable softplus form
        logp = (-0.5 * (((u - mu) / std) ** 2 + 2 * log_std
                        + torch.log(torch.tensor(2 * torch.pi, dtype=u.dtype)))
                ).sum(dim=-1)
        logp = logp - (2 * (torch.log(torch.tensor(2.0, dtype=u.dtype)) - u
                            - torch.nn.functional.softplus(-2 * u))).sum(dim=-1)
        return action, logp


class QNetwork(nn.Module):
    def __init__(self, obs_dim: int, act_dim: int, hidden=(64, 64, 64)):
        super().__init__()
        self.net = mlp([obs_dim + act_dim, *hidden, 1])

    def forward(self, obs: torch.Tensor, act: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([obs, act], dim=-1)).squeeze(-1)
