"""Experiment configuration: named target presets, JSON round-trip, hashing.

The config file is one JSON object with flat sections (target, setup, noise,
episode, controller, run) mirroring the domain types. CLI flags override
fields by dotted path.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .channels import NoiseParams
from .errors import FormatError
from .fock import FockSpace, Ket
from .lyapunov import build_context
from .measurement import MeasurementSetup, build_setup, subspace_index, verify_stabilizable
from .policy import load_policy
from .simulator import (
    EpisodeConfig,
    LyapunovController,
    MlpController,
    ScriptedController,
    ZeroController,
)

DEFAULT_DIM = 30

PRESET_NAMES = ("fock", "two-comp", "binomial-0369", "cat3", "cat4")


def _coherent_amplitudes(space: FockSpace, alpha: complex) -> np.ndarray:
    if alpha == 0:
        amps = np.zeros(space.dim, dtype=complex)
        amps[0] = 1.0
        return amps
    lev = space.levels
    log_fact = np.cumsum(np.concatenate([[0.0], np.log(np.arange(1, space.dim))]))
    return np.exp(-0.5 * abs(alpha) ** 2 + lev * np.log(complex(alpha)) - 0.5 * log_fact)


def _cat_state(space: FockSpace, alpha: complex, m: int, delta_n: int) -> Ket:
    amps = _coherent_amplitudes(space, alpha)
    mask = space.levels % delta_n == m
    amps = np.where(mask, amps, 0.0)
    return Ket(amps, space).normalize()


def make_preset_target(spec: str, space: FockSpace) -> tuple[Ket, int]:
    """Build a named target state; returns (ket, natural delta_n)."""
    name, _, args = spec.partition(":")
    if name == "fock":
        n = int(args)
        amps = np.zeros(space.dim, dtype=complex)
        amps[n] = 1.0
        return Ket(amps, space), 3
    if name == "two-comp":
        parts = args.split(",")
        if len(parts) not in (2, 3):
            raise FormatError(f"two-comp wants n1,n2[,phase], got {args!r}")
        n1, n2 = int(parts[0]), int(parts[1])
        if not 0 <= n1 < n2 < space.dim:
            raise FormatError(f"two-comp levels must satisfy 0 <= n1 < n2 < dim")
        phase = float(parts[2]) if len(parts) == 3 else 0.0
        amps = np.zeros(space.dim, dtype=complex)
        amps[n1] = 1.0 / math.sqrt(2.0)
        amps[n2] = np.exp(1j * phase) / math.sqrt(2.0)
        return Ket(amps, space), n2 - n1
    if name == "binomial-0369":
        # equal superposition of the two kitten-code words
        # (|0> + sqrt(3)|6>)/2 and (sqrt(3)|3> + |9>)/2
        amps = np.zeros(space.dim, dtype=complex)
        s3 = math.sqrt(3.0)
        for n, c in ((0, 1.0), (3, s3), (6, s3), (9, 1.0)):
            amps[n] = c
        return Ket(amps, space).normalize(), 3
    if name == "cat3":
        return _cat_state(space, math.sqrt(3.0), m=0, delta_n=3), 3
    if name == "cat4":
        return _cat_state(space, 2.0, m=1, delta_n=4), 4
    raise FormatError(f"unknown preset {spec!r}; known: {PRESET_NAMES}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Primitive-field mirror of one experiment; builders produce domain objects."""

    dim: int = DEFAULT_DIM
    target_preset: str | None = "two-comp:1,4"
    target_re: list[float] | None = None
    target_im: list[float] | None = None
    delta_n: int | None = None
    m_target: int | None = None
    parity_override: str | None = None
    noise_t_cav: float | None = None
    noise_t_cycle: float = 1e-6
    noise_eta_e_given_g: float = 0.01
    noise_eta_g_given_e: float = 0.02
    noise_eps_probe: float = 0.0
    max_cycles: int = 50
    guard_threshold: float = 0.02
    guard_levels: list[int] | None = None
    controller_kind: str = "lyapunov"
    controller_alpha_max: float = 0.3
    controller_weights: str | None = None
    controller_script_re: list[float] | None = None
    controller_script_im: list[float] | None = None
    n_traj: int = 600
    seed: int = 20240101
    workers: int = 1

    # -- domain-object builders ----------------------------------------------

    @property
    def space(self) -> FockSpace:
        return FockSpace(self.dim)

    def build_target(self) -> Ket:
        if self.target_re is not None:
            re = np.asarray(self.target_re, dtype=float)
            im = np.asarray(self.target_im, dtype=float) if self.target_im else np.zeros_like(re)
            if re.shape != (self.dim,) or im.shape != (self.dim,):
                raise FormatError("explicit target coefficients must have length dim")
            return Ket(re + 1j * im, self.space).normalize()
        if self.target_preset is None:
            raise FormatError("config needs either target_preset or target_re")
        ket, _ = make_preset_target(self.target_preset, self.space)
        return ket

    def resolved_delta_n(self) -> int:
        if self.delta_n is not None:
            if self.delta_n < 1:
                raise FormatError(f"delta_n must be >= 1, got {self.delta_n}")
            return self.delta_n
        if self.target_preset is not None:
            _, natural = make_preset_target(self.target_preset, self.space)
            return natural
        raise FormatError("delta_n must be given for explicit-coefficient targets")

    def resolved_m_target(self) -> int:
        if self.m_target is not None:
            return self.m_target
        target = self.build_target()
        dn = self.resolved_delta_n()
        pops = np.abs(target.amplitudes) ** 2
        support = np.flatnonzero(pops > 1e-12)
        subspaces = {subspace_index(int(n), dn) for n in support}
        if len(subspaces) != 1:
            raise FormatError(
                f"target spans subspaces {sorted(subspaces)} for delta_n={dn}; "
                "set m_target explicitly or fix the target"
            )
        return subspaces.pop()

    def build_setup(self) -> MeasurementSetup:
        return build_setup(
            self.resolved_delta_n(), self.resolved_m_target(), self.parity_override
        )

    def build_noise(self) -> NoiseParams | None:
        if self.noise_t_cav is None:
            return None
        return NoiseParams(
            t_cav=self.noise_t_cav,
            t_cycle=self.noise_t_cycle,
            eta_e_given_g=self.noise_eta_e_given_g,
            eta_g_given_e=self.noise_eta_g_given_e,
            eps_probe=self.noise_eps_probe,
        )

    def complex_mode(self) -> bool:
        amps = self.build_target().amplitudes
        return bool(np.abs(amps.imag).max() > 1e-12)

    def build_episode_config(self, validate_target: bool = True) -> EpisodeConfig:
        target = self.build_target()
        setup = self.build_setup()
        if validate_target:
            ok, residuals = verify_stabilizable(target, setup)
            if not ok:
                raise FormatError(
                    f"target is not stabilizable under delta_n="
                    f"{self.resolved_delta_n()} (residuals {residuals})"
                )
        return EpisodeConfig(
            target=target,
            setup=setup,
            max_cycles=self.max_cycles,
            guard_levels=tuple(self.guard_levels) if self.guard_levels else None,
            guard_threshold=self.guard_threshold,
            noise=self.build_noise(),
            seed=self.seed,
        )

    def build_controller(self):
        kind = self.controller_kind
        if kind == "zero":
            return ZeroController()
        if kind == "lyapunov":
            ctx = build_context(self.build_target(), self.space, self.controller_alpha_max)
            return LyapunovController(ctx)
        if kind == "mlp":
            if not self.controller_weights:
                raise FormatError("mlp controller needs controller_weights path")
            return MlpController(load_policy(self.controller_weights), self.complex_mode())
        if kind == "scripted":
            re = self.controller_script_re or []
            im = self.controller_script_im or [0.0] * len(re)
            if len(im) != len(re):
                raise FormatError("scripted controller re/im lengths differ")
            return ScriptedController([complex(r, i) for r, i in zip(re, im)])
        raise FormatError(f"unknown controller kind {kind!r}")

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        flat = asdict(self)
        return {
            "dim": flat["dim"],
            "target": {
                "preset": flat["target_preset"],
                "coefficients_re": flat["target_re"],
                "coefficients_im": flat["target_im"],
            },
            "setup": {
                "delta_n": flat["delta_n"],
                "m_target": flat["m_target"],
                "parity_override": flat["parity_override"],
            },
            "noise": {
                "t_cav": flat["noise_t_cav"],
                "t_cycle": flat["noise_t_cycle"],
                "eta_e_given_g": flat["noise_eta_e_given_g"],
                "eta_g_given_e": flat["noise_eta_g_given_e"],
                "eps_probe": flat["noise_eps_probe"],
            },
            "episode": {
                "max_cycles": flat["max_cycles"],
                "guard_threshold": flat["guard_threshold"],
                "guard_levels": flat["guard_levels"],
            },
            "controller": {
                "kind": flat["controller_kind"],
                "alpha_max": flat["controller_alpha_max"],
                "weights": flat["controller_weights"],
                "script_re": flat["controller_script_re"],
                "script_im": flat["controller_script_im"],
            },
            "run": {
                "n_traj": flat["n_traj"],
                "seed": flat["seed"],
                "workers": flat["workers"],
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        def section(name):
            out = data.get(name) or {}
            if not isinstance(out, dict):
                raise FormatError(f"config section {name!r} must be an object")
            return out

        target = section("target")
        setup = section("setup")
        noise = section("noise")
        episode = section("episode")
        controller = section("controller")
        run = section("run")
        defaults = cls()
        if target.get("coefficients_re") is not None:
            preset = target.get("preset")
        else:
            preset = target.get("preset", defaults.target_preset)
        return cls(
            dim=data.get("dim", DEFAULT_DIM),
            target_preset=preset,
            target_re=target.get("coefficients_re"),
            target_im=target.get("coefficients_im"),
            delta_n=setup.get("delta_n"),
            m_target=setup.get("m_target"),
            parity_override=setup.get("parity_override"),
            noise_t_cav=noise.get("t_cav"),
            noise_t_cycle=noise.get("t_cycle", defaults.noise_t_cycle),
            noise_eta_e_given_g=noise.get("eta_e_given_g", defaults.noise_eta_e_given_g),
            noise_eta_g_given_e=noise.get("eta_g_given_e", defaults.noise_eta_g_given_e),
            noise_eps_probe=noise.get("eps_probe", defaults.noise_eps_probe),
            max_cycles=episode.get("max_cycles", defaults.max_cycles),
            guard_threshold=episode.get("guard_threshold", defaults.guard_threshold),
            guard_levels=episode.get("guard_levels"),
            controller_kind=controller.get("kind", defaults.controller_kind),
            controller_alpha_max=controller.get("alpha_max", defaults.controller_alpha_max),
            controller_weights=controller.get("weights"),
            controller_script_re=controller.get("script_re"),
            controller_script_im=controller.get("script_im"),
            n_traj=run.get("n_traj", defaults.n_traj),
            seed=run.get("seed", defaults.seed),
            workers=run.get("workers", defaults.workers),
        )

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"config {path} is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(data)


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def apply_override(cfg: ExperimentConfig, dotted: str) -> ExperimentConfig:
    """Apply one 'section.key=value' override; values parse as JSON literals."""
    if "=" not in dotted:
        raise FormatError(f"override {dotted!r} must look like section.key=value")
    path, _, raw = dotted.partition("=")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    data = cfg.to_dict()
    keys = path.split(".")
    node = data
    for key in keys[:-1]:
        if key not in node or not isinstance(node[key], dict):
            raise FormatError(f"unknown config section {key!r} in {dotted!r}")
        node = node[key]
    if keys[-1] not in node:
        raise FormatError(f"unknown config key {keys[-1]!r} in {dotted!r}")
    node[keys[-1]] = value
    return ExperimentConfig.from_dict(data)
