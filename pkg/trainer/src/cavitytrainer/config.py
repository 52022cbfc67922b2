"""Training hyperparameters.

Defaults reproduce the published tables exactly: two hidden layers, 256-wide
actor, 512-wide critics, discount 0.95, TQC batch 1024 with fixed entropy
coefficient 0.09 and 5 critics, learning rate 1e-4, target-update tau 0.001;
PPO uses 256-wide layers, 2048 rollout steps, batch 256. Everything else
follows the reference implementation's defaults (25 quantiles, 2 dropped per
critic, clip 0.2, GAE 0.95, 10 epochs).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class TrainerConfig:
    algorithm: str = "tqc"

    # shared architecture / optimization
    n_layers: int = 2
    actor_width: int = 256
    activation: str = "tanh"
    discount: float = 0.95
    learning_rate: float = 1e-4

    # TQC
    critic_width: int = 512
    batch_size: int = 1024
    entropy_coefficient: float = 0.09
    n_critics: int = 5
    target_update_tau: float = 0.001
    n_quantiles: int = 25
    top_quantiles_to_drop_per_net: int = 2
    buffer_size: int = 200_000
    learning_starts: int = 1_000
    train_freq: int = 1

    # PPO
    ppo_width: int = 256
    ppo_n_steps: int = 2_048
    ppo_batch_size: int = 256
    ppo_epochs: int = 10
    ppo_clip_range: float = 0.2
    ppo_gae_lambda: float = 0.95
    ppo_entropy_coefficient: float = 0.0
    ppo_value_coefficient: float = 0.5
    ppo_max_grad_norm: float = 0.5

    # run control
    total_steps: int = 50_000
    eval_every: int = 5_000
    eval_episodes: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ("tqc", "ppo"):
            raise ValueError(f"algorithm must be 'tqc' or 'ppo', got {self.algorithm}")
        if self.activation != "tanh":
            raise ValueError("only tanh is supported (and published)")

    def to_manifest(self) -> dict:
        return asdict(self)


def toy_profile(algorithm: str = "tqc", total_steps: int = 50_000, seed: int = 0) -> TrainerConfig:
    """Down-sized network/batch for desk-scale runs; selection rules, losses,
    and every structural choice stay those of the full configuration."""
    return TrainerConfig(
        algorithm=algorithm,
        actor_width=64,
        critic_width=128,
        batch_size=256,
        buffer_size=60_000,
        learning_starts=500,
        ppo_width=64,
        total_steps=total_steps,
        eval_every=max(total_steps // 10, 500),
        eval_episodes=32,
        seed=seed,
    )
