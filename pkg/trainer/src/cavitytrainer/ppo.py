"""Proximal policy optimization with a tanh-squashed Gaussian head (the
squashed head keeps actions inside the interval and makes the deterministic
actor exportable to the portable weight format)."""

from __future__ import annotations

import copy

import numpy as np
import torch

from .config import TrainerConfig
from .evaluate import run_policy_eval
from .nets import SquashedGaussianActor, ValueCritic
from .tqc import TrainResult


def _gae(rewards, values, dones, last_value, gamma, lam):
    n = len(rewards)
    advantages = np.zeros(n)
    running = 0.0
    for t in reversed(range(n)):
        next_value = last_value if t == n - 1 else values[t + 1]
        next_nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * next_nonterminal - values[t]
        running = delta + gamma * lam * next_nonterminal * running
        advantages[t] = running
    return advantages, advantages + values


def train_ppo(env, cfg: TrainerConfig, progress=None) -> TrainResult:
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    obs_dim = env.observation_space.size
    act_dim = env.action_space.size

    actor = SquashedGaussianActor(obs_dim, act_dim, cfg.ppo_width, cfg.n_layers)
    critic = ValueCritic(obs_dim, cfg.ppo_width, cfg.n_layers)
    opt = torch.optim.Adam(
        list(actor.parameters()) + list(critic.parameters()), lr=cfg.learning_rate
    )

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
    steps_done = 0
    losses = {"policy_loss": float("nan"), "value_loss": float("nan")}
    next_eval = cfg.eval_every
    while steps_done < cfg.total_steps:
        horizon = min(cfg.ppo_n_steps, cfg.total_steps - steps_done)
        batch_obs = np.empty((horizon, obs_dim))
        batch_pre_tanh = np.empty((horizon, act_dim))
        batch_logp = np.empty(horizon)
        batch_rewards = np.empty(horizon)
        batch_dones = np.empty(horizon)
        batch_values = np.empty(horizon)

        for t in range(horizon):
            obs_t = torch.as_tensor(obs, dtype=torch.float32).unsqueeze(0)
            with torch.no_grad():
                mean, log_std = actor(obs_t)
                normal = torch.distributions.Normal(mean, log_std.exp())
                pre_tanh = normal.sample()
                action = torch.tanh(pre_tanh)
                logp = (
                    normal.log_prob(pre_tanh) - torch.log1p(-action.pow(2) + 1e-12)
                ).sum()
                value = critic(obs_t)
            batch_obs[t] = obs
            batch_pre_tanh[t] = pre_tanh.squeeze(0).numpy()
            batch_logp[t] = float(logp)
            batch_values[t] = float(value)
            obs, reward, done, _ = env.step(action.squeeze(0).numpy())
            batch_rewards[t] = reward
            batch_dones[t] = float(done)
            if done:
                obs = env.reset(seed=cfg.seed + steps_done + t + 1)
        steps_done += horizon

        with torch.no_grad():
            last_value = float(critic(torch.as_tensor(obs, dtype=torch.float32).unsqueeze(0)))
        advantages, returns = _gae(
            batch_rewards, batch_values, batch_dones, last_value,
            cfg.discount, cfg.ppo_gae_lambda,
        )
        advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)

        obs_t = torch.as_tensor(batch_obs, dtype=torch.float32)
        pre_tanh_t = torch.as_tensor(batch_pre_tanh, dtype=torch.float32)
        old_logp_t = torch.as_tensor(batch_logp, dtype=torch.float32)
        adv_t = torch.as_tensor(advantages, dtype=torch.float32)
        ret_t = torch.as_tensor(returns, dtype=torch.float32)

        idx = np.arange(horizon)
        for _ in range(cfg.ppo_epochs):
            rng.shuffle(idx)
            for start in range(0, horizon, cfg.ppo_batch_size):
                mb = idx[start : start + cfg.ppo_batch_size]
                logp, entropy = actor.log_prob_of(obs_t[mb], pre_tanh_t[mb])
                ratio = torch.exp(logp - old_logp_t[mb])
                clipped = torch.clamp(
                    ratio, 1.0 - cfg.ppo_clip_range, 1.0 + cfg.ppo_clip_range
                )
                policy_loss = -torch.min(ratio * adv_t[mb], clipped * adv_t[mb]).mean()
                value_loss = (critic(obs_t[mb]) - ret_t[mb]).pow(2).mean()
                loss = (
                    policy_loss
                    + cfg.ppo_value_coefficient * value_loss
                    - cfg.ppo_entropy_coefficient * entropy.mean()
                )
                opt.zero_grad(set_to_none=True)
                loss.backward()
                torch.nn.utils.clip_grad_norm_(
                    list(actor.parameters()) + list(critic.parameters()),
                    cfg.ppo_max_grad_norm,
                )
                opt.step()
        losses = {
            "policy_loss": float(policy_loss.detach()),
            "value_loss": float(value_loss.detach()),
        }
        if not np.isfinite(losses["policy_loss"]) or not np.isfinite(losses["value_loss"]):
            raise FloatingPointError(f"training diverged: losses {losses}")

        if steps_done >= next_eval:
            evaluate(steps_done, losses)
            next_eval += cfg.eval_every
            obs = env.reset(seed=cfg.seed + steps_done)

    if not result.curve:
        evaluate(steps_done, losses)
    return result
