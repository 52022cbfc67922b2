"""Gym-style environment facade over a bridge client."""

from __future__ import annotations

import numpy as np

from .client import BridgeClient
from .spaces import Box


class BridgeEnv:
    """reset/step adapter; spaces come from the server's spec message."""

    def __init__(self, client: BridgeClient):
        self.client = client
        spec = client.spec()
        self.observation_space = Box(-np.inf, np.inf, (spec["observation_length"],))
        self.action_space = Box(
            spec["action_low"], spec["action_high"], (spec["action_dim"],)
        )
        self.max_cycles = spec["max_cycles"]
        self.spec_message = spec
        self.last_info: dict = {}

    def reset(self, seed: int | None = None) -> np.ndarray:
        obs, info = self.client.reset(seed)
        self.last_info = info
        return np.asarray(obs, dtype=float)

    def step(self, action):
        clipped = self.action_space.clip(action)
        obs, reward, done, info = self.client.step(clipped)
        self.last_info = info
        return np.asarray(obs, dtype=float), float(reward), bool(done), info

    def close(self) -> None:
        self.client.close()

    def __enter__(self) -> "BridgeEnv":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def make_env(env_config_path=None, host=None, port=None, noisy_training=False) -> BridgeEnv:
    """Spawn a stdio server from a config file, or connect to a TCP one."""
    if env_config_path is not None:
        return BridgeEnv(BridgeClient.spawn_stdio(env_config_path, noisy_training))
    if host is not None and port is not None:
        return BridgeEnv(BridgeClient.connect_tcp(host, port))
    raise ValueError("need either env_config_path (stdio) or host+port (tcp)")
