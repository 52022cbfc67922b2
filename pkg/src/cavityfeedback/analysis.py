"""Exhaustive trajectory-tree enumeration, batch statistics, and noise sweeps.

The policy space over N feedback cycles is a binary tree with 2^N outcome
sequences. Enumerating it (noiseless) with exact branch probabilities gives
the full trajectory distribution of a policy; Monte Carlo sampling of the
same process is kept alongside as a cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channels import NoiseParams
from .errors import DepthLimit
from .fock import DensityMatrix, FockSpace, Ket, fidelity_pure
from .measurement import (
    OUTCOME_E,
    OUTCOME_G,
    MeasurementSetup,
    build_ops,
    frame_correction,
    outcome_probs,
)
from .qfilter import FilterState, estimate_in_frame, ideal_step
from .simulator import EpisodeConfig, EpisodeRecord, run_batch

MAX_TREE_DEPTH = 20
MATERIALIZE_DEPTH = 10
PRUNE_PROB = 1e-12


@dataclass
class TreeNode:
    outcomes: str
    branch_prob: float
    cum_prob: float
    fidelity: float
    alpha: complex | None = None
    state: FilterState | None = None


@dataclass
class TrajectoryTree:
    depth: int
    nodes: list[TreeNode]
    leaves: list[TreeNode]
    pruned_mass: float

    def leaf_probability_sum(self) -> float:
        return float(sum(leaf.cum_prob for leaf in self.leaves))

    def weighted_mean_final_fidelity(self) -> float:
        total = self.leaf_probability_sum()
        return float(
            sum(leaf.cum_prob * leaf.fidelity for leaf in self.leaves) / total
        )


def _initial_filter_state(initial: DensityMatrix, setup: MeasurementSetup) -> FilterState:
    frame = None
    flip = None
    if setup.phase_tracking:
        frame = np.ones(initial.space.dim)
        flip = frame_correction(setup, initial.space)
    return FilterState(rho_est=initial.normalize(), step_index=0, frame=frame, frame_flip=flip)


def enumerate_tree(
    initial: DensityMatrix,
    controller,
    setup: MeasurementSetup,
    depth: int,
    target: Ket,
) -> TrajectoryTree:
    """Expand every outcome sequence of `depth` cycles, noiselessly.

    Each node applies the controller's displacement to its state and branches
    on both readouts with their exact probabilities; branches below 1e-12 are
    pruned and their mass recorded. States are materialized up to depth 10,
    deeper trees keep only the per-node scalars.
    """
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    if depth > MAX_TREE_DEPTH:
        raise DepthLimit(f"depth {depth} exceeds the 2^{MAX_TREE_DEPTH} node guard")
    space = initial.space
    ops = build_ops(setup, space)
    target = target.normalize()
    keep_states = depth <= MATERIALIZE_DEPTH

    root_state = _initial_filter_state(initial, setup)
    root = TreeNode(
        outcomes="",
        branch_prob=1.0,
        cum_prob=1.0,
        fidelity=fidelity_pure(estimate_in_frame(root_state), target),
        state=root_state if keep_states else None,
    )
    nodes = [root]
    leaves: list[TreeNode] = []
    pruned = 0.0

    def expand(node: TreeNode, state: FilterState, level: int) -> None:
        nonlocal pruned
        alpha = complex(controller(state))
        node.alpha = alpha
        displaced = _displace_state(state, alpha)
        probs = dict(zip((OUTCOME_G, OUTCOME_E), outcome_probs(ops, displaced.rho_est)))
        for outcome in (OUTCOME_G, OUTCOME_E):
            p = probs[outcome]
            if p < PRUNE_PROB:
                pruned += node.cum_prob * p
                continue
            child_state = ideal_step(displaced, 0.0, outcome, ops)
            child = TreeNode(
                outcomes=node.outcomes + outcome,
                branch_prob=p,
                cum_prob=node.cum_prob * p,
                fidelity=fidelity_pure(estimate_in_frame(child_state), target),
                state=child_state if keep_states else None,
            )
            nodes.append(child)
            if level + 1 == depth:
                leaves.append(child)
            else:
                expand(child, child_state, level + 1)

    expand(root, root_state, 0)
    return TrajectoryTree(depth=depth, nodes=nodes, leaves=leaves, pruned_mass=pruned)


def _displace_state(state: FilterState, alpha: complex) -> FilterState:
    from dataclasses import replace

    from .fock import displacement_cache

    cache = displacement_cache(state.rho_est.space)
    return replace(state, rho_est=cache.apply_to_density(state.rho_est, alpha))


def sample_tree_trajectories(
    initial: DensityMatrix,
    controller,
    setup: MeasurementSetup,
    depth: int,
    target: Ket,
    n_samples: int,
    seed: int = 0,
) -> np.ndarray:
    """Monte Carlo sampling of the same noiseless process the tree enumerates;
    returns the final fidelity of each sampled trajectory."""
    ops = build_ops(setup, initial.space)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    target = target.normalize()
    out = np.empty(n_samples)
    for i in range(n_samples):
        state = _initial_filter_state(initial, setup)
        for _ in range(depth):
            alpha = complex(controller(state))
            displaced = _displace_state(state, alpha)
            p_g, _ = outcome_probs(ops, displaced.rho_est)
            outcome = OUTCOME_G if rng.random() < p_g else OUTCOME_E
            state = ideal_step(displaced, 0.0, outcome, ops)
        out[i] = fidelity_pure(estimate_in_frame(state), target)
    return out


def tree_report(tree: TrajectoryTree) -> list[dict]:
    """One row per surviving leaf: outcome string, per-step fidelities along
    the path, and log10 of the trajectory probability."""
    by_outcomes = {node.outcomes: node for node in tree.nodes}
    rows = []
    for leaf in tree.leaves:
        fids = []
        for k in range(len(leaf.outcomes) + 1):
            fids.append(by_outcomes[leaf.outcomes[:k]].fidelity)
        rows.append(
            {
                "outcomes": leaf.outcomes,
                "fidelities": fids,
                "probability": leaf.cum_prob,
                "log10_probability": float(np.log10(leaf.cum_prob)),
            }
        )
    rows.sort(key=lambda r: r["outcomes"])
    return rows


@dataclass
class DistributionStats:
    """Per-cycle location statistics plus terminal-fidelity distribution."""

    cycles: np.ndarray
    mean: np.ndarray
    median: np.ndarray
    p25: np.ndarray
    p75: np.ndarray
    final_fidelities: np.ndarray
    final_mean: float
    final_median: float
    histogram_counts: np.ndarray
    histogram_edges: np.ndarray
    n_records: int
    n_heralded_out: int

    def to_dict(self) -> dict:
        return {
            "cycles": self.cycles.tolist(),
            "mean": self.mean.tolist(),
            "median": self.median.tolist(),
            "p25": self.p25.tolist(),
            "p75": self.p75.tolist(),
            "final_fidelities": self.final_fidelities.tolist(),
            "final_mean": self.final_mean,
            "final_median": self.final_median,
            "histogram_counts": self.histogram_counts.tolist(),
            "histogram_edges": self.histogram_edges.tolist(),
            "n_records": self.n_records,
            "n_heralded_out": self.n_heralded_out,
        }


def _padded_curves(records: list[EpisodeRecord], which: str) -> np.ndarray:
    length = max(len(r) for r in records)
    out = np.empty((len(records), length))
    for i, rec in enumerate(records):
        vals = getattr(rec, which)
        out[i, : len(vals)] = vals
        if len(vals) < length:
            out[i, len(vals) :] = vals[-1]
    return out


def distribution_stats(
    records: list[EpisodeRecord],
    herald_cut: float | None = None,
    herald_cycle: int | None = None,
    n_bins: int = 50,
) -> DistributionStats:
    """Aggregate trajectory logs into the per-cycle median/percentile bands
    and the final-fidelity distribution.

    Optional heralding drops trajectories whose *filter* fidelity (the signal
    an experiment actually has) is below herald_cut at herald_cycle (default:
    the last cycle).
    """
    if not records:
        raise ValueError("no records to aggregate")
    kept = records
    n_out = 0
    if herald_cut is not None:
        filt = _padded_curves(records, "filter_fidelities")
        cycle = filt.shape[1] - 1 if herald_cycle is None else min(herald_cycle, filt.shape[1] - 1)
        mask = filt[:, cycle] >= herald_cut
        kept = [r for r, keep in zip(records, mask) if keep]
        n_out = int((~mask).sum())
        if not kept:
            raise ValueError("heralding removed every trajectory")
    curves = _padded_curves(kept, "true_fidelities")
    finals = curves[:, -1]
    counts, edges = np.histogram(finals, bins=n_bins, range=(0.0, 1.0))
    return DistributionStats(
        cycles=np.arange(curves.shape[1]),
        mean=curves.mean(axis=0),
        median=np.median(curves, axis=0),
        p25=np.percentile(curves, 25, axis=0),
        p75=np.percentile(curves, 75, axis=0),
        final_fidelities=finals,
        final_mean=float(finals.mean()),
        final_median=float(np.median(finals)),
        histogram_counts=counts,
        histogram_edges=edges,
        n_records=len(kept),
        n_heralded_out=n_out,
    )


@dataclass
class SweepGrid:
    """Max-over-cycles fidelity statistics on a decoherence-parameter grid."""

    ratios: tuple[float, ...]
    eps_values: tuple[float, ...]
    max_median: np.ndarray
    max_mean: np.ndarray

    def to_dict(self) -> dict:
        return {
            "t_cycle_over_t_cav": list(self.ratios),
            "eps_probe": list(self.eps_values),
            "max_median": self.max_median.tolist(),
            "max_mean": self.max_mean.tolist(),
        }


def run_sweep(
    ratios,
    eps_values,
    controller,
    target: Ket,
    setup: MeasurementSetup,
    t_cycle: float,
    eta_e_given_g: float,
    eta_g_given_e: float,
    n_traj: int,
    max_cycles: int = 50,
    seed: int = 0,
    workers: int = 1,
) -> SweepGrid:
    """Batch runs over a (cavity decay, probe error) grid; per-cell seeds are
    shared so cells are comparable pairwise."""
    ratios = tuple(float(r) for r in ratios)
    eps_values = tuple(float(e) for e in eps_values)
    if not ratios or not eps_values:
        raise ValueError("sweep axes must be nonempty")
    max_median = np.empty((len(eps_values), len(ratios)))
    max_mean = np.empty((len(eps_values), len(ratios)))
    for i, eps in enumerate(eps_values):
        for j, ratio in enumerate(ratios):
            noise = None
            if ratio > 0.0 or eps > 0.0:
                t_cav = t_cycle / ratio if ratio > 0.0 else float("inf")
                noise = NoiseParams(
                    t_cav=t_cav,
                    t_cycle=t_cycle,
                    eta_e_given_g=eta_e_given_g,
                    eta_g_given_e=eta_g_given_e,
                    eps_probe=eps,
                )
            cfg = EpisodeConfig(
                target=target,
                setup=setup,
                max_cycles=max_cycles,
                noise=noise,
                seed=seed,
            )
            records = run_batch(cfg, controller, n_traj, workers=workers)
            stats = distribution_stats(records)
            max_median[i, j] = float(stats.median.max())
            max_mean[i, j] = float(stats.mean.max())
    return SweepGrid(
        ratios=ratios, eps_values=eps_values, max_median=max_median, max_mean=max_mean
    )
