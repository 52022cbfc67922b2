"""Truncated-quantile-critics training: a soft actor-critic whose critics
regress return distributions as quantiles, with the largest quantiles of the
pooled target ensemble dropped to curb overestimation."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
import torch

from .config import TrainerConfig
from .evaluate import run_policy_eval
from .nets import (
    QuantileCriticEnsemble,
    SquashedGaussianActor,
    polyak_update,
    quantile_huber_loss,
    quantile_taus,
)


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        self.capacity = capacity
        self.obs = np.empty((capacity, obs_dim))
        self.actions = np.empty((capacity, act_dim))
        self.rewards = np.empty(capacity)
        self.next_obs = np.empty((capacity, obs_dim))
        self.dones = np.empty(capacity)
        self.size = 0
        self.cursor = 0

    def push(self, obs, action, reward, next_obs, done) -> None:
        i = self.cursor
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.dones[i] = done
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, batch: int):
        idx = rng.integers(0, self.size, batch)
        to = lambda a: torch.as_tensor(a, dtype=torch.float32)
        return (
            to(self.obs[idx]),
            to(self.actions[idx]),
            to(self.rewards[idx]),
            to(self.next_obs[idx]),
            to(self.dones[idx]),
        )


@dataclass
class TrainResult:
    actor: SquashedGaussianActor
    best_actor_state: dict
    best_median_fidelity: float
    curve: list[dict] = field(default_factory=list)


def train_tqc(env, cfg: TrainerConfig, progress=None) -> TrainResult:
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    obs_dim = env.observation_space.size
    act_dim = env.action_space.size

    actor = SquashedGaussianActor(obs_dim, act_dim, cfg.actor_width, cfg.n_layers)
    critics = QuantileCriticEnsemble(
        obs_dim, act_dim, cfg.critic_width, cfg.n_critics, cfg.n_quantiles, cfg.n_layers
    )
    target_critics = copy.deepcopy(critics)
    for p in target_critics.parameters():
        p.requires_grad_(False)

    actor_opt = torch.optim.Adam(actor.parameters(), lr=cfg.learning_rate)
    critic_opt = torch.optim.Adam(critics.parameters(), lr=cfg.learning_rate)
    taus = quantile_taus(cfg.n_quantiles)
    drop_total = cfg.top_quantiles_to_drop_per_net * cfg.n_critics
    kept = cfg.n_critics * cfg.n_quantiles - drop_total

    buffer = ReplayBuffer(cfg.buffer_size, obs_dim, act_dim)
    result = TrainResult(actor=actor, best_actor_state={}, best_median_fidelity=-1.0)

    def evaluate(step: int, losses) -> None:
        def policy_fn(obs):
            with torch.no_grad():
                t = torch.as_tensor(obs, dtype=torch.float32).unsqueeze(0)
                return actor.deterministic(t).squeeze(0).numpy()

        stats = run_policy_eval(env, policy_fn, cfg.eval_episodes)
        row = {"step": step, **stats, **losses}
        result.curve.append(row)
        if stats["median_final_fidelity"] > result.best_median_fidelity:
            result.best_median_fidelity = stats["median_final_fidelity"]
            result.best_actor_state = copy.deepcopy(actor.state_dict())
        if progress is not None:
            progress(row)

    obs = env.reset(seed=cfg.seed)
    losses = {"critic_loss": float("nan"), "actor_loss": float("nan")}
    for step in range(1, cfg.total_steps + 1):
        if buffer.size < cfg.learning_starts:
            action = env.action_space.sample(rng)
        else:
            with torch.no_grad():
                t = torch.as_tensor(obs, dtype=torch.float32).unsqueeze(0)
                action, _ = actor.sample(t)
                action = action.squeeze(0).numpy()
        next_obs, reward, done, _ = env.step(action)
        buffer.push(obs, action, reward, next_obs, float(done))
        obs = env.reset(seed=cfg.seed + step) if done else next_obs

        if buffer.size >= cfg.learning_starts and step % cfg.train_freq == 0:
            b_obs, b_act, b_rew, b_next, b_done = buffer.sample(rng, cfg.batch_size)

            with torch.no_grad():
                next_action, next_logp = actor.sample(b_next)
                next_q = target_critics(b_next, next_action)  # (B, C, Q)
                pooled = next_q.reshape(next_q.shape[0], -1)
                pooled, _ = torch.sort(pooled, dim=1)
                truncated = pooled[:, :kept]
                soft = truncated - cfg.entropy_coefficient * next_logp
                target = b_rew[:, None] + cfg.discount * (1.0 - b_done[:, None]) * soft

            pred = critics(b_obs, b_act)
            critic_loss = quantile_huber_loss(pred, target, taus)
            critic_opt.zero_grad(set_to_none=True)
            critic_loss.backward()
            critic_opt.step()

            new_action, logp = actor.sample(b_obs)
            q_new = critics(b_obs, new_action).mean(dim=(1, 2))
            actor_loss = (cfg.entropy_coefficient * logp.squeeze(-1) - q_new).mean()
            actor_opt.zero_grad(set_to_none=True)
            actor_loss.backward()
            actor_opt.step()

            polyak_update(target_critics, critics, cfg.target_update_tau)
            losses = {
                "critic_loss": float(critic_loss.detach()),
                "actor_loss": float(actor_loss.detach()),
            }
            if not np.isfinite(losses["critic_loss"]) or not np.isfinite(losses["actor_loss"]):
                raise FloatingPointError(
                    f"training diverged at step {step}: losses {losses}"
                )

        if step % cfg.eval_every == 0:
            evaluate(step, losses)
            obs = env.reset(seed=cfg.seed + step)

    if not result.curve:
        evaluate(cfg.total_steps, losses)
    return result
