"""Synthetic datasets with known ground truth.

Every generator returns sample arrays plus a JSON-serializable truth record
(true map parameters, centroids, labels) so tests and reports can score
against an oracle instead of eyeballing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .linalg import matrix_sqrt_psd, symmetrize

TASK_NAMES = ("gauss_shift", "gauss_affine", "clusters_outlier", "two_conditions")


@dataclass
class SynthTask:
    name: str
    source: np.ndarray
    target: np.ndarray
    truth: dict
    source_labels: np.ndarray | None = None
    target_labels: np.ndarray | None = None


@dataclass
class ConditionalSynthTask:
    name: str
    entries: list  # (label, condition_vector, source_rows, target_rows)
    truth: dict


def _unit(v):
    return v / np.linalg.norm(v)


def gauss_shift(n: int, dim: int, rng: np.random.Generator,
                shift_norm: float = 3.0) -> SynthTask:
    """Standard normal source; target is an independent draw shifted by m.

    The optimal map is x -> x + m; truth records m.
    """
    if n < 1 or dim < 1:
        raise ValidationError("n and dim must be positive")
    shift = _unit(rng.normal(size=dim)) * shift_norm
    source = rng.normal(size=(n, dim))
    target = rng.normal(size=(n, dim)) + shift
    return SynthTask(
        name="gauss_shift",
        source=source,
        target=target,
        truth={"kind": "shift", "shift": shift.tolist(),
               "map": "T(x) = x + shift"},
    )


def gauss_affine(n: int, dim: int, rng: np.random.Generator) -> SynthTask:
    """Standard normal source; target N(mean, cov) with a random SPD cov.

    The optimal map from N(0, I) is T(x) = A x + b with A = cov^{1/2},
    b = mean; truth records A, b, mean, cov.
    """
    if n < 1 or dim < 1:
        raise ValidationError("n and dim must be positive")
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    eigs = rng.uniform(0.5, 2.0, size=dim)
    cov = symmetrize(q @ np.diag(eigs) @ q.T)
    mean = rng.normal(size=dim)
    a = matrix_sqrt_psd(cov)
    source = rng.normal(size=(n, dim))
    target = rng.normal(size=(n, dim)) @ a + mean
    return SynthTask(
        name="gauss_affine",
        source=source,
        target=target,
        truth={"kind": "affine", "mean": mean.tolist(), "cov": cov.tolist(),
               "a": a.tolist(), "b": mean.tolist(), "map": "T(x) = A x + b"},
    )


def clusters_outlier(n: int, dim: int, rng: np.random.Generator,
                     near_shift: float = 1.5, outlier_shift: float = 8.0,
                     near_fraction: float = 0.7,
                     spread: float = 0.3) -> SynthTask:
    """Source cluster at the origin; target = near cluster + far outlier cluster.

    Target labels: 0 = near, 1 = outlier. The near centroid sits near_shift
    from the origin, the outlier centroid outlier_shift away in another
    direction. An extremal map with large w should land (almost) everything
    in the near cluster; a plain transport map must cover both.
    """
    if not (0.0 < near_fraction < 1.0):
        raise ValidationError("near_fraction must be in (0, 1)")
    if dim < 2:
        raise ValidationError("need dim >= 2 for distinct shift directions")
    u = _unit(rng.normal(size=dim))
    v = rng.normal(size=dim)
    v = _unit(v - (v @ u) * u)  # orthogonal direction for the outlier arm
    near_center = near_shift * u
    outlier_center = outlier_shift * v
    n_near = max(1, min(n - 1, int(round(near_fraction * n))))
    n_out = n - n_near
    source = spread * rng.normal(size=(n, dim))
    near = near_center + spread * rng.normal(size=(n_near, dim))
    outlier = outlier_center + spread * rng.normal(size=(n_out, dim))
    target = np.vstack([near, outlier])
    labels = np.concatenate([np.zeros(n_near, dtype=np.int64),
                             np.ones(n_out, dtype=np.int64)])
    order = rng.permutation(n)
    return SynthTask(
        name="clusters_outlier",
        source=source,
        target=target[order],
        target_labels=labels[order],
        truth={
            "kind": "clusters_outlier",
            "near_center": near_center.tolist(),
            "outlier_center": outlier_center.tolist(),
            "near_fraction": n_near / n,
            "spread": spread,
        },
    )


def two_conditions(n: int, dim: int, rng: np.random.Generator,
                   shift_norm: float = 3.0) -> ConditionalSynthTask:
    """Two conversion directions: targets shifted by +m and by -m.

    Condition vectors are the 2-d one-hot basis; truth records each shift.
    """
    shift = _unit(rng.normal(size=dim)) * shift_norm
    entries = []
    truth_shifts = {}
    for label, sign, vector in (("plus", 1.0, (1.0, 0.0)), ("minus", -1.0, (0.0, 1.0))):
        source = rng.normal(size=(n, dim))
        target = rng.normal(size=(n, dim)) + sign * shift
        entries.append((label, np.array(vector), source, target))
        truth_shifts[label] = (sign * shift).tolist()
    return ConditionalSynthTask(
        name="two_conditions",
        entries=entries,
        truth={"kind": "two_conditions", "shifts": truth_shifts,
               "map": "T(x, s) = x + shift[s]"},
    )


def conversion_clusters(n_source: int, n_reference: int, dim: int,
                        rng: np.random.Generator, n_clusters: int = 3,
                        angular_spread: float = 0.35, offset: float = 0.12,
                        exact_proportions: bool = True,
                        run_length: float = 1.0) -> SynthTask:
    """Directional clusters for frame-conversion tests (cosine geometry).

    Source frames scatter around n_clusters orthonormal directions; the
    reference holds fresh frames around the same directions nudged by a
    small tangent offset (the "same speaker content, new voice" stand-in).
    Labels are returned for both sides; truth records both sets of centroid
    directions. exact_proportions=False draws the reference labels as a
    stream, modeling a short reference take; run_length > 1 makes that
    stream sticky (expected run_length consecutive frames per cluster), so
    a short take over-represents whichever clusters it dwelled on while a
    long take still averages out.
    """
    if dim < n_clusters:
        raise ValidationError(f"need dim >= n_clusters, got {dim} < {n_clusters}")
    if n_clusters < 2:
        raise ValidationError("need at least 2 clusters")
    if run_length < 1.0:
        raise ValidationError(f"run_length must be >= 1, got {run_length}")
    q, _ = np.linalg.qr(rng.normal(size=(dim, n_clusters)))
    directions = q.T  # rows are orthonormal
    shifted = np.empty_like(directions)
    for c in range(n_clusters):
        t = rng.normal(size=dim)
        t = _unit(t - (t @ directions[c]) * directions[c])
        shifted[c] = _unit(directions[c] + offset * t)

    def draw(count, centers, labels_out):
        frames = np.empty((count, dim))
        for i in range(count):
            c = labels_out[i]
            frames[i] = centers[c] + angular_spread * rng.normal(size=dim)
        return frames

    src_labels = np.arange(n_source) % n_clusters
    rng.shuffle(src_labels)
    if exact_proportions:
        ref_labels = np.arange(n_reference) % n_clusters
        rng.shuffle(ref_labels)
    else:
        # sticky label stream: geometric runs with mean run_length
        stay = 1.0 - 1.0 / run_length
        ref_labels = np.empty(n_reference, dtype=np.int64)
        ref_labels[0] = rng.integers(n_clusters)
        for i in range(1, n_reference):
            if rng.uniform() < stay:
                ref_labels[i] = ref_labels[i - 1]
            else:
                ref_labels[i] = rng.integers(n_clusters)
    source = draw(n_source, directions, src_labels)
    reference = draw(n_reference, shifted, ref_labels)
    return SynthTask(
        name="conversion_clusters",
        source=source,
        target=reference,
        source_labels=src_labels.astype(np.int64),
        target_labels=ref_labels.astype(np.int64),
        truth={
            "kind": "conversion_clusters",
            "directions": directions.tolist(),
            "shifted_directions": shifted.tolist(),
            "angular_spread": angular_spread,
            "offset": offset,
        },
    )


def nearest_direction(frames, directions) -> np.ndarray:
    """Index of the most cosine-similar direction per frame (cluster scoring)."""
    frames = np.asarray(frames, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64)
    fn = frames / np.linalg.norm(frames, axis=1, keepdims=True)
    dn = directions / np.linalg.norm(directions, axis=1, keepdims=True)
    return np.argmax(fn @ dn.T, axis=1)
