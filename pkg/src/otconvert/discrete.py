"""Discrete optimal transport on point clouds.

Covers cost-matrix construction, an entropic solver that works entirely in
the log domain, an exact small-instance solver used as a reference, and the
post-processing steps that turn a coupling into a frame mapping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog

from .errors import CapacityError, DomainError, NumericalError, ShapeError, ValidationError
from .linalg import logsumexp

COST_KINDS = ("squared_euclidean", "cosine_distance")

EXACT_SIZE_LIMIT = 64

# rows of X processed per block when building cost matrices, to bound the
# m*n*d intermediate
_COST_BLOCK_ELEMS = 1 << 22


@dataclass
class CostMatrix:
    """Pairwise transport costs between two row sets.

    values[i, j] is the cost of moving row i of the first set onto row j of
    the second. squared_euclidean is ½‖x−y‖²; cosine_distance is
    1 − cos(x, y), which lives in [0, 2].
    """

    values: np.ndarray
    kind: str


@dataclass
class SinkhornConfig:
    """Entropic solver settings.

    tolerance bounds the max L∞ marginal deviation at convergence.
    log_domain is informational: the solver has no other mode.
    """

    epsilon: float = 0.1
    max_iterations: int = 10_000
    tolerance: float = 1e-6
    log_domain: bool = True

    def __post_init__(self):
        if not (self.epsilon > 0):
            raise ValidationError(f"epsilon must be > 0, got {self.epsilon}")
        if not (self.tolerance > 0):
            raise ValidationError(f"tolerance must be > 0, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if not self.log_domain:
            raise ValidationError("only the log-domain solver exists")


@dataclass
class TransportPlan:
    """A coupling between two discrete distributions.

    epsilon is the entropic regularization it was solved at (0 = exact).
    marginal_error is the max L∞ deviation of the realized marginals.
    """

    coupling: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    epsilon: float
    iterations_used: int
    marginal_error: float

    @property
    def shape(self):
        return self.coupling.shape

    def transport_cost(self, cost) -> float:
        """<C, coupling> for a cost matrix of matching shape."""
        values = cost.values if isinstance(cost, CostMatrix) else np.asarray(cost)
        if values.shape != self.coupling.shape:
            raise ShapeError(
                f"cost shape {values.shape} != plan shape {self.coupling.shape}"
            )
        return float(np.sum(values * self.coupling))


def _as_rows(x, name) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeError(f"{name} must be a nonempty 2-d array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{name} contains non-finite entries")
    return x


def cost_matrix(x, y, kind: str = "squared_euclidean") -> CostMatrix:
    """Pairwise cost between rows of x and rows of y.

    Parameters
    ----------
    x, y : arrays of shape (m, d) and (n, d)
    kind : "squared_euclidean" (½‖x−y‖²) or "cosine_distance" (1 − cos)

    Raises
    ------
    DomainError
        if kind is "cosine_distance" and either input has a zero-norm row;
        the message names the offending row.
    """
    if kind not in COST_KINDS:
        raise ValidationError(f"kind must be one of {COST_KINDS}, got {kind!r}")
    x = _as_rows(x, "x")
    y = _as_rows(y, "y")
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"feature dims differ: {x.shape[1]} vs {y.shape[1]}")
    m, n = x.shape[0], y.shape[0]
    if kind == "cosine_distance":
        for name, arr in (("x", x), ("y", y)):
            norms = np.linalg.norm(arr, axis=1)
            zero = np.flatnonzero(norms == 0.0)
            if zero.size:
                raise DomainError(
                    f"cosine cost undefined: {name} row {zero[0]} has zero norm"
                )
        xu = x / np.linalg.norm(x, axis=1, keepdims=True)
        yu = y / np.linalg.norm(y, axis=1, keepdims=True)
        values = 1.0 - np.clip(xu @ yu.T, -1.0, 1.0)
    else:
        values = np.empty((m, n))
        block = max(1, _COST_BLOCK_ELEMS // max(1, n * x.shape[1]))
        for start in range(0, m, block):
            stop = min(m, start + block)
            diff = x[start:stop, None, :] - y[None, :, :]
            values[start:stop] = 0.5 * np.einsum("ijk,ijk->ij", diff, diff)
    return CostMatrix(values=values, kind=kind)


def uniform_marginal(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def _check_marginal(v, n, name) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (n,):
        raise ShapeError(f"{name} must have shape ({n},), got {v.shape}")
    if not np.all(np.isfinite(v)) or np.any(v <= 0.0):
        raise ValidationError(f"{name} must be strictly positive and finite")
    if abs(v.sum() - 1.0) > 1e-9:
        raise ValidationError(f"{name} must sum to 1, got {v.sum()!r}")
    return v


def _cost_values(cost) -> np.ndarray:
    values = cost.values if isinstance(cost, CostMatrix) else np.asarray(cost, dtype=np.float64)
    if values.ndim != 2:
        raise ShapeError(f"cost must be 2-d, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValidationError("cost matrix contains non-finite entries")
    return values


def sinkhorn(cost, a=None, b=None, cfg: SinkhornConfig | None = None) -> TransportPlan:
    """Entropic optimal transport via log-domain dual iterations.

    Alternates exact coordinate updates of the dual potentials f, g of the
    regularized problem, with every sum taken through logsumexp, so the
    iteration cannot under- or overflow at small epsilon. After a g update
    the column sums match b exactly; convergence is declared when the row
    sums also match a within cfg.tolerance. If the iteration budget runs out
    first the plan is still returned and carries the achieved
    marginal_error.

    Marginals default to uniform.
    """
    values = _cost_values(cost)
    m, n = values.shape
    a = uniform_marginal(m) if a is None else _check_marginal(a, m, "a")
    b = uniform_marginal(n) if b is None else _check_marginal(b, n, "b")
    cfg = cfg or SinkhornConfig()

    log_a = np.log(a)
    log_b = np.log(b)
    scaled = -values / cfg.epsilon
    # after each g update the column sums are exact for the current f, so
    # convergence reduces to the row-sum residual, and the logsumexp that
    # measures it is the same one the next f update needs
    f = log_a - logsumexp(scaled + np.zeros(n)[None, :], axis=1)
    iterations = 0
    for iterations in range(1, cfg.max_iterations + 1):
        g = log_b - logsumexp(scaled + f[:, None], axis=0)
        log_row = logsumexp(scaled + g[None, :], axis=1)
        if np.abs(np.exp(f + log_row) - a).max() < cfg.tolerance:
            break
        f = log_a - log_row
    plan = np.exp(scaled + f[:, None] + g[None, :])
    row_err = np.abs(plan.sum(axis=1) - a).max()
    col_err = np.abs(plan.sum(axis=0) - b).max()
    return TransportPlan(
        coupling=plan,
        row_marginal=a,
        col_marginal=b,
        epsilon=cfg.epsilon,
        iterations_used=iterations,
        marginal_error=float(max(row_err, col_err)),
    )


def exact_ot(cost, a=None, b=None):
    """Exact (unregularized) optimal transport on a small instance.

    Returns (TransportPlan, optimal_cost). Instances are capped at
    64 x 64. Equal uniform marginals on a square instance reduce to an
    assignment problem; anything else is solved as the transportation LP.
    """
    values = _cost_values(cost)
    m, n = values.shape
    if m > EXACT_SIZE_LIMIT or n > EXACT_SIZE_LIMIT:
        raise CapacityError(
            f"exact solver is limited to {EXACT_SIZE_LIMIT}x{EXACT_SIZE_LIMIT},"
            f" got {m}x{n}"
        )
    a = uniform_marginal(m) if a is None else _check_marginal(a, m, "a")
    b = uniform_marginal(n) if b is None else _check_marginal(b, n, "b")

    if m == n and np.all(a == a[0]) and np.all(b == b[0]):
        rows, cols = linear_sum_assignment(values)
        plan = np.zeros((m, n))
        plan[rows, cols] = 1.0 / m
        iterations = 0
    else:
        # transportation LP; the last column constraint is implied by the rest
        a_eq = np.zeros((m + n - 1, m * n))
        for i in range(m):
            a_eq[i, i * n : (i + 1) * n] = 1.0
        for j in range(n - 1):
            a_eq[m + j, j::n] = 1.0
        b_eq = np.concatenate([a, b[:-1]])
        res = linprog(values.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None),
                      method="highs")
        if not res.success:
            raise NumericalError(f"transportation LP failed: {res.message}")
        plan = np.maximum(res.x.reshape(m, n), 0.0)
        iterations = int(getattr(res, "nit", 0))

    row_err = np.abs(plan.sum(axis=1) - a).max()
    col_err = np.abs(plan.sum(axis=0) - b).max()
    out = TransportPlan(
        coupling=plan,
        row_marginal=a,
        col_marginal=b,
        epsilon=0.0,
        iterations_used=iterations,
        marginal_error=float(max(row_err, col_err)),
    )
    return out, float(np.sum(values * plan))


def project_to_marginals(coupling, a, b) -> np.ndarray:
    """Repair a nearly feasible coupling so its marginals are exactly (a, b).

    Overfull rows, then overfull columns, are scaled down; the leftover
    deficit is spread as a rank-one correction. Total mass moved is bounded
    by the original marginal violation, so the repaired plan's cost stays
    within max|C| times that violation of the original. Turns a
    tolerance-limited Sinkhorn plan into a certified member of the
    transportation polytope, whose cost therefore cannot undercut the exact
    optimum.
    """
    p = np.asarray(coupling, dtype=np.float64).copy()
    row = p.sum(axis=1)
    np.multiply(p, np.minimum(1.0, np.divide(a, row, out=np.ones_like(a),
                                             where=row > 0))[:, None], out=p)
    col = p.sum(axis=0)
    np.multiply(p, np.minimum(1.0, np.divide(b, col, out=np.ones_like(b),
                                             where=col > 0))[None, :], out=p)
    deficit_a = a - p.sum(axis=1)
    deficit_b = b - p.sum(axis=0)
    missing = deficit_a.sum()
    if missing > 0:
        p += np.outer(deficit_a, deficit_b) / missing
    return p


def plan_top_k_map(plan: TransportPlan, y, k: int):
    """Map each source row to the mean of its k strongest targets.

    For source row i, the k columns with the largest coupling are averaged
    (unweighted). Ties go to the lower column index.
    """
    y = _as_rows(y, "y")
    coupling = plan.coupling
    m, n = coupling.shape
    if y.shape[0] != n:
        raise ShapeError(f"plan has {n} columns but y has {y.shape[0]} rows")
    k = int(k)
    if k < 1 or k > n:
        raise ValidationError(f"k must be in [1, {n}], got {k}")
    # stable sort on the negated row keeps ascending column order among ties
    order = np.argsort(-coupling, axis=1, kind="stable")[:, :k]
    return y[order].mean(axis=1)


def plan_barycentric_map(plan: TransportPlan, y):
    """Coupling-weighted average of targets: row i -> Σⱼ πᵢⱼ yⱼ / Σⱼ πᵢⱼ."""
    y = _as_rows(y, "y")
    coupling = plan.coupling
    if y.shape[0] != coupling.shape[1]:
        raise ShapeError(
            f"plan has {coupling.shape[1]} columns but y has {y.shape[0]} rows"
        )
    mass = coupling.sum(axis=1)
    if np.any(mass <= 0.0):
        raise DomainError(
            f"plan row {int(np.argmin(mass))} carries no mass; cannot project"
        )
    return (coupling @ y) / mass[:, None]


def sample_index_pairs(plan: TransportPlan, count: int, rng: np.random.Generator):
    """Draw i.i.d. index pairs (i, j) with probability coupling[i, j]."""
    if count < 1:
        raise ValidationError("count must be >= 1")
    coupling = plan.coupling
    m, n = coupling.shape
    flat = coupling.ravel()
    total = flat.sum()
    if not np.isfinite(total) or total <= 0:
        raise ValidationError("plan mass must be positive and finite")
    flat = flat / total
    drawn = rng.choice(m * n, size=int(count), p=flat)
    return np.unravel_index(drawn, (m, n))


def sample_pairs_from_plan(plan: TransportPlan, x, y, count: int,
                           rng: np.random.Generator):
    """Sample feature-row pairs (x₀, x₁) from the coupling.

    Returns two arrays of shape (count, d): the source rows and the target
    rows of the sampled index pairs.
    """
    x = _as_rows(x, "x")
    y = _as_rows(y, "y")
    m, n = plan.coupling.shape
    if x.shape[0] != m or y.shape[0] != n:
        raise ShapeError(
            f"plan shape {(m, n)} does not match row counts {(x.shape[0], y.shape[0])}"
        )
    i_idx, j_idx = sample_index_pairs(plan, count, rng)
    return x[i_idx], y[j_idx]
