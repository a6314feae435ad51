"""Soft actor-critic with twin critics and polyak-averaged targets.

Maximizes return plus policy entropy (fixed trade-off weight).  Replay
tuples are goal-conditioned (obs, action, reward, next_obs) without a
terminal flag: under the sparse goal reward, continuing from a reached goal
keeps earning zero, so bootstrapping through episode ends is consistent.
"""
from __future__ import annotations

from copy import deepcopy
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .networks import QNetwork, SquashedGaussianPolicy

CHECKPOINT_FORMAT = 1


@dataclass
class SacConfig:
    gamma: float = 0.99
    alpha: float = 0.2          # entropy trade-off, fixed (no auto-tuning)
    lr: float = 3e-4
    polyak: float = 0.995
    hidden: tuple[int, ...] = (64, 64, 64)

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        if self.alpha <= 0:
            raise ValueError("entropy weight must be positive")


class SacAgent:
    def __init__(self, obs_dim: int, act_dim: int,
                 config: SacConfig | None = None, seed: int = 0,
                 dtype=torch.float32):
        self.cfg = config or SacConfig()
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.dtype = dtype
        torch.manual_seed(seed)
        kw = dict(hidden=tuple(self.cfg.hidden))
        self.pi = SquashedGaussianPolicy(obs_dim, act_dim, **kw).to(dtype)
        self.q1 = QNetwork(obs_dim, act_dim, **kw).to(dtype)
        self.q2 = QNetwork(obs_dim, act_dim, **kw).to(dtype)
        self.q1_targ = deepcopy(self.q1)
        self.q2_targ = deepcopy(self.q2)
        for p in list(self.q1_targ.parameters()) + list(self.q2_targ.parameters()):
            p.requires_grad_(False)
        self.pi_opt = torch.optim.Adam(self.pi.parameters(), lr=self.cfg.lr)
        self.q_opt = torch.optim.Adam(
            list(self.q1.parameters()) + list(self.q2.parameters()),
            lr=self.cfg.lr)
        self.noise = torch.Generator()
        self.noise.manual_seed(seed)

    def seed_noise(self, seed: int):
        self.noise.manual_seed(int(seed))

    def act(self, obs, deterministic: bool = False) -> np.ndarray:
        obs_t = torch.as_tensor(np.asarray(obs), dtype=self.dtype).unsqueeze(0)
        with torch.no_grad():
            action, _ = self.pi(obs_t, deterministic=deterministic,
                                with_logprob=False, generator=self.noise)
        return action.squeeze(0).numpy().astype(np.float64)

    def compute_targets(self, batch: dict) -> torch.Tensor:
        """Bellman targets: r + gamma * (min Q'(s', a') - alpha * log pi)."""
        next_obs = torch.as_tensor(batch["next_obs"], dtype=self.dtype)
        reward = torch.as_tensor(batch["reward"], dtype=self.dtype)
        with torch.no_grad():
            a_next, logp_next = self.pi(next_obs, generator=self.noise)
            q_next = torch.min(self.q1_targ(next_obs, a_next),
                               self.q2_targ(next_obs, a_next))
            return reward + self.cfg.gamma * (q_next
                                              - self.cfg.alpha * logp_next)

    def q_loss(self, batch: dict, target: torch.Tensor) -> torch.Tensor:
        obs = torch.as_tensor(batch["obs"], dtype=self.dtype)
        act = torch.as_tensor(batch["action"], dtype=self.dtype)
        return (((self.q1(obs, act) - target) ** 2).mean()
                + ((self.q2(obs, act) - target) ** 2).mean())

    def pi_loss(self, batch: dict) -> tuple[torch.Tensor, torch.Tensor]:
        obs = torch.as_tensor(batch["obs"], dtype=self.dtype)
        action, logp = self.pi(obs, generator=self.noise)
        q = torch.min(self.q1(obs, action), self.q2(obs, action))
        return (self.cfg.alpha * logp - q).mean(), logp

    def update(self, batch: dict) -> dict:
        """One gradient step on the critics and the policy, then polyak."""
        target = self.compute_targets(batch)
        self.q_opt.zero_grad()
        q_loss = self.q_loss(batch, target)
        q_loss.backward()
        self.q_opt.step()

        for p in list(self.q1.parameters()) + list(self.q2.parameters()):
            p.requires_grad_(False)
        self.pi_opt.zero_grad()
        pi_loss, logp = self.pi_loss(batch)
        pi_loss.backward()
        self.pi_opt.step()
        for p in list(self.q1.parameters()) + list(self.q2.parameters()):
            p.requires_grad_(True)

        with torch.no_grad():
            for net, targ in ((self.q1, self.q1_targ), (self.q2, self.q2_targ)):
                for p, pt in zip(net.parameters(), targ.parameters()):
                    pt.mul_(self.cfg.polyak)
                    pt.add_((1.0 - self.cfg.polyak) * p)
        return {
            "q_loss": float(q_loss.detach()),
            "pi_loss": float(pi_loss.detach()),
            "entropy": float(-logp.mean().detach()),
        }

    # -- persistence ---------------------------------------------------------

    def save(self, path):
        torch.save({
            "format": CHECKPOINT_FORMAT,
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
            "config": asdict(self.cfg),
            "state": {
                "pi": self.pi.state_dict(),
                "q1": self.q1.state_dict(),
                "q2": self.q2.state_dict(),
                "q1_targ": self.q1_targ.state_dict(),
                "q2_targ": self.q2_targ.state_dict(),
                "pi_opt": self.pi_opt.state_dict(),
                "q_opt": self.q_opt.state_dict(),
            },
        }, path)

    @staticmethod
    def load(path, seed: int = 0) -> "SacAgent":
        blob = torch.load(path, weights_only=False)
        if blob.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {blob.get('format')!r}")
        cfg = SacConfig(**{**blob["config"],
                           "hidden": tuple(blob["config"]["hidden"])})
        agent = SacAgent(blob["obs_dim"], blob["act_dim"], cfg, seed=seed)
        agent.pi.load_state_dict(blob["state"]["pi"])
        agent.q1.load_state_dict(blob["state"]["q1"])
        agent.q2.load_state_dict(blob["state"]["q2"])
        agent.q1_targ.load_state_dict(blob["state"]["q1_targ"])
        agent.q2_targ.load_state_dict(blob["state"]["q2_targ"])
        agent.pi_opt.load_state_dict(blob["state"]["pi_opt"])
        agent.q_opt.load_state_dict(blob["state"]["q_opt"])
        return agent
