"""Deterministic evaluation rollouts and the random baseline."""

from __future__ import annotations

import numpy as np

EVAL_SEED_BASE = 9_000_000


def run_policy_eval(env, policy_fn, episodes: int, seed_base: int = EVAL_SEED_BASE) -> dict:
    """Roll `episodes` deterministic episodes with fixed reset seeds; returns
    summary statistics of episode returns and final filter fidelities."""
    returns = np.empty(episodes)
    final_fidelities = np.empty(episodes)
    for k in range(episodes):
        obs = env.reset(seed=seed_base + k)
        total = 0.0
        done = False
        info = env.last_info
        while not done:
            obs, reward, done, info = env.step(policy_fn(obs))
            total += reward
        returns[k] = total
        final_fidelities[k] = info["filter_fidelity"]
    return {
        "median_return": float(np.median(returns)),
        "mean_return": float(returns.mean()),
        "median_final_fidelity": float(np.median(final_fidelities)),
        "mean_final_fidelity": float(final_fidelities.mean()),
    }


def random_policy(env, seed: int = 0):
    rng = np.random.default_rng(seed)

    def policy_fn(_obs):
        return env.action_space.sample(rng)

    return policy_fn
