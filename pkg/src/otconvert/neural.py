"""Conditional neural optimal transport trained as a maximin game.

A map network T(x, s) and a potential network f(y, s) share a condition
vector s. The potential ascends

    L_f = w_eff * mean f(y, s) - mean f(T(x, s), s)

and the map descends

    L_T = mean [ c(x, T(x, s)) - f(T(x, s), s) ],    c = half squared distance,

alternating one potential step with inner_steps map steps. The extremal
variant forces f <= 0 structurally (output through negated softplus) and
scales the target term by w >= 1, which is what lets the map ignore far
outliers in the target at large w.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from .errors import DivergenceError, ShapeError, ValidationError
from .metrics import frechet_distance, w2_squared_empirical
from .nn import (
    MlpModel,
    _forward_cached,
    adam_init,
    adam_step,
    init_mlp,
    mlp_backward,
    mlp_forward,
)


@dataclass
class ConditionSpec:
    """One conversion direction: a condition vector and its two samplers.

    Samplers are called as sampler(count, rng) and must return (count, dim)
    arrays.
    """

    label: str
    vector: np.ndarray
    source_sampler: Callable
    target_sampler: Callable


@dataclass
class ConditionalDataset:
    dim: int
    condition_dim: int
    conditions: list

    def __post_init__(self):
        if not self.conditions:
            raise ValidationError("dataset needs at least one condition")
        for spec in self.conditions:
            vec = np.asarray(spec.vector, dtype=np.float64)
            if vec.shape != (self.condition_dim,):
                raise ShapeError(
                    f"condition {spec.label!r} vector has shape {vec.shape},"
                    f" expected ({self.condition_dim},)"
                )


def dataset_from_arrays(entries, dim: int | None = None) -> ConditionalDataset:
    """Build a dataset whose samplers resample rows with replacement.

    entries: iterable of (label, condition_vector, source_rows, target_rows).
    """
    conditions = []
    cond_dim = None
    for label, vector, source_rows, target_rows in entries:
        vector = np.asarray(vector, dtype=np.float64)
        source_rows = np.asarray(source_rows, dtype=np.float64)
        target_rows = np.asarray(target_rows, dtype=np.float64)
        if dim is None:
            dim = source_rows.shape[1]
        if cond_dim is None:
            cond_dim = vector.shape[0]

        def make(rows):
            def sampler(count, rng, rows=rows):
                return rows[rng.integers(0, rows.shape[0], size=count)]

            return sampler

        conditions.append(
            ConditionSpec(
                label=str(label),
                vector=vector,
                source_sampler=make(source_rows),
                target_sampler=make(target_rows),
            )
        )
    return ConditionalDataset(dim=int(dim), condition_dim=int(cond_dim),
                              conditions=conditions)


@dataclass
class NotConfig:
    """Training settings for the maximin game.

    w defaults to 12 in extremal mode and 1 otherwise; it must be >= 1 and
    only scales anything when extremal is on. Only the half-squared
    Euclidean cost exists.
    """

    inner_steps: int = 10
    batch_size: int = 128
    map_lr: float = 1e-3
    potential_lr: float = 1e-3
    lr_decay: str = "none"
    total_outer_iterations: int = 3000
    extremal: bool = False
    w: float | None = None
    cost: str = "squared_euclidean"
    hidden_dims: tuple[int, ...] = (128, 128, 128)
    weight_decay: float = 1e-10
    divergence_guard: float = 1e8
    checkpoint_every: int = 250
    eval_samples: int = 64

    def __post_init__(self):
        if self.inner_steps < 1:
            raise ValidationError("inner_steps must be >= 1")
        if self.total_outer_iterations < 1:
            raise ValidationError("total_outer_iterations must be >= 1")
        if self.cost != "squared_euclidean":
            raise ValidationError("only the squared_euclidean cost is supported")
        if self.w is not None and self.w < 1.0:
            raise ValidationError(f"w must be >= 1, got {self.w}")
        if self.checkpoint_every < 1:
            raise ValidationError("checkpoint_every must be >= 1")
        if self.lr_decay not in ("none", "cosine"):
            raise ValidationError(f"lr_decay must be 'none' or 'cosine', got {self.lr_decay!r}")

    def lr_scale(self, iteration: int) -> float:
        """Step-size multiplier for outer iteration `iteration` (1-based)."""
        if self.lr_decay == "none":
            return 1.0
        # cosine anneal to zero; damps the endpoint lottery of the game
        frac = (iteration - 1) / max(self.total_outer_iterations - 1, 1)
        return 0.5 * (1.0 + math.cos(math.pi * frac))

    @property
    def w_effective(self) -> float:
        if self.w is not None:
            return float(self.w)
        return 12.0 if self.extremal else 1.0


@dataclass
class NotModelPair:
    map_model: MlpModel
    potential_model: MlpModel
    nonpositivity_transform: bool


def apply_map(pair: NotModelPair, x, s) -> np.ndarray:
    """T(x, s) for a batch of rows under one condition vector."""
    return mlp_forward(pair.map_model, np.asarray(x, dtype=np.float64), s=s)


def potential_value(pair: NotModelPair, y, s) -> np.ndarray:
    """f(y, s) as a length-n vector, after the nonpositivity transform."""
    u = mlp_forward(pair.potential_model, np.asarray(y, dtype=np.float64), s=s)
    if pair.nonpositivity_transform:
        return -np.logaddexp(0.0, u)[:, 0]
    return u[:, 0]


def _potential_with_grads(pair, y, s, upstream_f):
    """f values plus parameter/input grads of sum(upstream_f * f)."""
    u, cache = _forward_cached(pair.potential_model, y, s=s)
    if pair.nonpositivity_transform:
        f = -np.logaddexp(0.0, u[:, 0])
        up_u = (upstream_f * -expit(u[:, 0]))[:, None]
    else:
        f = u[:, 0]
        up_u = upstream_f[:, None]
    grads, y_grad = mlp_backward(pair.potential_model, y, s=s, upstream=up_u,
                                 cache=cache)
    return f, grads, y_grad


def _check_mode(pair: NotModelPair, cfg: NotConfig):
    if pair.nonpositivity_transform != cfg.extremal:
        raise ValidationError(
            "extremal flag and the pair's nonpositivity transform disagree"
        )


def not_loss_potential(pair: NotModelPair, x, y, s, cfg: NotConfig):
    """Potential objective and its gradients w.r.t. potential parameters.

    Returns (loss, grads). The potential ascends this loss; callers feed the
    negated gradients to a minimizer.
    """
    _check_mode(pair, cfg)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w_eff = cfg.w_effective if cfg.extremal else 1.0
    tx = apply_map(pair, x, s)
    f_y, grads_y, _ = _potential_with_grads(pair, y, s,
                                            np.full(y.shape[0], w_eff / y.shape[0]))
    f_tx, grads_tx, _ = _potential_with_grads(pair, tx, s,
                                              np.full(x.shape[0], -1.0 / x.shape[0]))
    loss = float(w_eff * f_y.mean() - f_tx.mean())
    if not np.isfinite(loss):
        raise DivergenceError("potential loss became non-finite")
    grads = [gy + gt for gy, gt in zip(grads_y, grads_tx)]
    return loss, grads


def not_loss_map(pair: NotModelPair, x, s, cfg: NotConfig):
    """Map objective and its gradients w.r.t. map parameters (to descend)."""
    _check_mode(pair, cfg)
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    tx, cache = _forward_cached(pair.map_model, x, s=s)
    diff = tx - x
    f_tx, _, f_y_grad = _potential_with_grads(pair, tx, s, np.full(n, -1.0 / n))
    loss = float(0.5 * np.mean(np.sum(diff * diff, axis=1)) - f_tx.mean())
    if not np.isfinite(loss):
        raise DivergenceError("map loss became non-finite")
    upstream_tx = diff / n + f_y_grad
    grads, _ = mlp_backward(pair.map_model, x, s=s, upstream=upstream_tx, cache=cache)
    return loss, grads


@dataclass
class ConditionEval:
    label: str
    w2sq_map: float
    w2sq_source: float
    fd_map: float
    bound_holds: bool


@dataclass
class Checkpoint:
    iteration: int
    conditions: list


@dataclass
class TrainTrace:
    potential_losses: list = field(default_factory=list)
    map_losses: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)


def _init_pair(dim, condition_dim, cfg, rng) -> NotModelPair:
    map_model = init_mlp((dim, *cfg.hidden_dims, dim), rng, activation="relu",
                         condition_dim=condition_dim)
    potential_model = init_mlp((dim, *cfg.hidden_dims, 1), rng, activation="relu",
                               condition_dim=condition_dim)
    return NotModelPair(
        map_model=map_model,
        potential_model=potential_model,
        nonpositivity_transform=cfg.extremal,
    )


def _checkpoint(pair, dataset, cfg, rng, iteration) -> Checkpoint:
    evals = []
    for spec in dataset.conditions:
        xs = spec.source_sampler(cfg.eval_samples, rng)
        ys = spec.target_sampler(cfg.eval_samples, rng)
        tx = apply_map(pair, xs, spec.vector)
        w2_map = w2_squared_empirical(tx, ys, mode="exact_small")
        w2_src = w2_squared_empirical(xs, ys, mode="exact_small")
        fd = frechet_distance(tx, ys)
        evals.append(
            ConditionEval(
                label=spec.label,
                w2sq_map=w2_map,
                w2sq_source=w2_src,
                fd_map=fd,
                bound_holds=bool(fd <= 2.0 * w2_map + 1e-8),
            )
        )
    return Checkpoint(iteration=iteration, conditions=evals)


def _train(dataset: ConditionalDataset, cfg: NotConfig, rng: np.random.Generator,
           stop_check=None):
    pair = _init_pair(dataset.dim, dataset.condition_dim, cfg, rng)
    pot_params = pair.potential_model.parameters()
    map_params = pair.map_model.parameters()
    pot_opt = adam_init(pot_params, cfg.potential_lr, weight_decay=cfg.weight_decay)
    map_opt = adam_init(map_params, cfg.map_lr, weight_decay=cfg.weight_decay)
    trace = TrainTrace()
    n_cond = len(dataset.conditions)
    for iteration in range(1, cfg.total_outer_iterations + 1):
        scale = cfg.lr_scale(iteration)
        pot_opt.learning_rate = scale * cfg.potential_lr
        map_opt.learning_rate = scale * cfg.map_lr
        spec = dataset.conditions[int(rng.integers(n_cond))]
        x = spec.source_sampler(cfg.batch_size, rng)
        y = spec.target_sampler(cfg.batch_size, rng)
        loss_f, pot_grads = not_loss_potential(pair, x, y, spec.vector, cfg)
        adam_step(pot_opt, pot_params, [-g for g in pot_grads])
        loss_t = 0.0
        for _ in range(cfg.inner_steps):
            x = spec.source_sampler(cfg.batch_size, rng)
            loss_t, map_grads = not_loss_map(pair, x, spec.vector, cfg)
            adam_step(map_opt, map_params, map_grads)
        trace.potential_losses.append(loss_f)
        trace.map_losses.append(loss_t)
        if max(abs(loss_f), abs(loss_t)) > cfg.divergence_guard:
            raise DivergenceError(
                f"training diverged at outer iteration {iteration}"
                f" (|loss| > {cfg.divergence_guard:g})",
                trace=trace,
            )
        if iteration % cfg.checkpoint_every == 0 or iteration == cfg.total_outer_iterations:
            checkpoint = _checkpoint(pair, dataset, cfg, rng, iteration)
            trace.checkpoints.append(checkpoint)
            if stop_check is not None and stop_check(iteration, pair, checkpoint):
                break
    return pair, trace


def not_train(dataset: ConditionalDataset, cfg: NotConfig, rng: np.random.Generator,
              stop_check=None):
    """Train the maximin pair. Returns (NotModelPair, TrainTrace).

    stop_check(iteration, pair, checkpoint) -> bool is consulted at every
    checkpoint; returning True ends training early.
    """
    return _train(dataset, cfg, rng, stop_check=stop_check)


def xnot_train(dataset: ConditionalDataset, cfg: NotConfig, rng: np.random.Generator,
               stop_check=None):
    """Extremal variant: identical loop; cfg.extremal picks the objective.

    With extremal off and w = 1 this is bit-for-bit not_train; the separate
    name marks intent at call sites.
    """
    return _train(dataset, cfg, rng, stop_check=stop_check)


@dataclass
class DualityGapReport:
    epsilon1_estimate: float
    epsilon2_estimate: float
    beta_note: str
    lipschitz_note: str


def _pair_value(pair, dataset, cfg, eval_batches) -> float:
    """Objective value of a pair: map loss plus the weighted target term."""
    w_eff = cfg.w_effective if cfg.extremal else 1.0
    total = 0.0
    for spec, (xs, ys) in zip(dataset.conditions, eval_batches):
        loss_t, _ = not_loss_map(pair, xs, spec.vector, cfg)
        total += loss_t + w_eff * float(potential_value(pair, ys, spec.vector).mean())
    return total / len(dataset.conditions)


def _map_only_loss(pair, dataset, cfg, eval_batches) -> float:
    total = 0.0
    for spec, (xs, _) in zip(dataset.conditions, eval_batches):
        loss_t, _ = not_loss_map(pair, xs, spec.vector, cfg)
        total += loss_t
    return total / len(dataset.conditions)


def duality_gap_estimate(pair: NotModelPair, dataset: ConditionalDataset,
                         cfg: NotConfig, rng: np.random.Generator,
                         probe_iterations: int = 500,
                         eval_samples: int = 512) -> DualityGapReport:
    """Diagnostic suboptimality probes for a trained pair.

    epsilon1: the pair's map loss minus the loss of a fresh map retrained
    against the frozen potential — how far the inner problem is from its
    best response. epsilon2 is reported as a proxy only: the objective value
    of a freshly retrained pair minus the current pair's value. Neither is a
    certified bound; both are estimated on fixed evaluation batches.
    """
    _check_mode(pair, cfg)
    eval_batches = [
        (spec.source_sampler(eval_samples, rng), spec.target_sampler(eval_samples, rng))
        for spec in dataset.conditions
    ]
    current_map_loss = _map_only_loss(pair, dataset, cfg, eval_batches)

    # best-response probe: fresh map, frozen potential
    fresh_map = init_mlp((dataset.dim, *cfg.hidden_dims, dataset.dim), rng,
                         activation="relu", condition_dim=dataset.condition_dim)
    probe_pair = NotModelPair(
        map_model=fresh_map,
        potential_model=pair.potential_model,
        nonpositivity_transform=pair.nonpositivity_transform,
    )
    params = fresh_map.parameters()
    opt = adam_init(params, cfg.map_lr, weight_decay=cfg.weight_decay)
    n_cond = len(dataset.conditions)
    for _ in range(probe_iterations):
        spec = dataset.conditions[int(rng.integers(n_cond))]
        x = spec.source_sampler(cfg.batch_size, rng)
        _, grads = not_loss_map(probe_pair, x, spec.vector, cfg)
        adam_step(opt, params, grads)
    fresh_map_loss = _map_only_loss(probe_pair, dataset, cfg, eval_batches)
    epsilon1 = current_map_loss - fresh_map_loss

    # saddle-value proxy: fresh pair retrained from scratch
    probe_cfg_iters = max(1, probe_iterations)
    retrain_cfg = NotConfig(
        inner_steps=cfg.inner_steps,
        batch_size=cfg.batch_size,
        map_lr=cfg.map_lr,
        potential_lr=cfg.potential_lr,
        total_outer_iterations=probe_cfg_iters,
        extremal=cfg.extremal,
        w=cfg.w,
        hidden_dims=cfg.hidden_dims,
        weight_decay=cfg.weight_decay,
        divergence_guard=cfg.divergence_guard,
        checkpoint_every=probe_cfg_iters,
        eval_samples=cfg.eval_samples,
    )
    fresh_pair, _ = _train(dataset, retrain_cfg, rng)
    epsilon2 = _pair_value(fresh_pair, dataset, cfg, eval_batches) - _pair_value(
        pair, dataset, cfg, eval_batches
    )
    return DualityGapReport(
        epsilon1_estimate=float(epsilon1),
        epsilon2_estimate=float(epsilon2),
        beta_note=(
            "beta (strong convexity of the potential) is not estimated;"
            " neural potentials need not be strongly convex"
        ),
        lipschitz_note=(
            "L (feature-extractor Lipschitz constant) is out of scope;"
            " features here are the identity"
        ),
    )
