"""Dense linear algebra kernels: products, dominant eigenvalues, symmetric
eigendecomposition, and quadratic-form distances.

Matrices are 2-D float64 numpy arrays in row-major order. Eigen routines use
power iteration with deterministic seeded start vectors, so results are
bit-reproducible for a given seed. Everything here is a pure function over
immutable inputs and safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

POWER_ITERATION_CAP = 10_000
POWER_ITERATION_TOL = 1e-12
ZERO_EIGENVALUE_CUTOFF = 1e-10
EIGENPAIR_RESIDUAL_TOL = 1e-7
NEGATIVE_FORM_CLAMP = -1e-9


class LinalgError(ValueError):
    """Raised on shape mismatches, asymmetry, or non-convergence."""


def as_matrix(values) -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting non-finite entries."""
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise LinalgError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise LinalgError("matrix contains NaN or Inf entries")
    return m


def as_vector(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise LinalgError(f"expected a 1-D vector, got ndim={v.ndim}")
    return v


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit shape check."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise LinalgError(
            f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}: "
            "inner dimensions differ"
        )
    return a @ b


def _check_symmetric(m: np.ndarray) -> np.ndarray:
    if m.shape[0] != m.shape[1]:
        raise LinalgError(f"expected a square matrix, got {m.shape[0]}x{m.shape[1]}")
    gap = np.abs(m - m.T)
    tol = 1e-12 * np.maximum(1.0, np.abs(m))
    if np.any(gap > tol):
        worst = np.unravel_index(np.argmax(gap - tol), gap.shape)
        raise LinalgError(f"matrix is not symmetric at entry {worst}")
    # Fold tiny round-off asymmetry away so downstream iterations are clean.
    return 0.5 * (m + m.T)


def _seeded_unit_vector(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        v = np.zeros(n)
        v[0] = 1.0
        return v
    return v / norm


def largest_eigenvalue(m, seed: int = 0) -> float:
    """Dominant eigenvalue of a symmetric PSD matrix by power iteration.

    Converges when the Rayleigh quotient changes by less than
    POWER_ITERATION_TOL (relative) between iterations; raises if the cap of
    10000 iterations is hit first, reporting the last estimate.
    """
    m = _check_symmetric(as_matrix(m))
    n = m.shape[0]
    v = _seeded_unit_vector(n, seed)
    lam = float(v @ (m @ v))
    for _ in range(POWER_ITERATION_CAP):
        w = m @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            # Start vector lies in the kernel; for PSD inputs this only
            # happens when the matrix is (numerically) zero.
            return 0.0
        v = w / norm
        lam_next = float(v @ (m @ v))
        if abs(lam_next - lam) <= POWER_ITERATION_TOL * max(1.0, abs(lam_next)):
            return lam_next
        lam = lam_next
    raise LinalgError(
        f"power iteration did not converge within {POWER_ITERATION_CAP} "
        f"iterations; last estimate {lam!r}"
    )


def symmetric_eigendecomposition(m, rank: int, seed: int = 0) -> tuple[list[float], np.ndarray]:
    """Top eigenpairs of a symmetric PSD matrix via deflated power iteration.

    Returns (eigenvalues, eigenvectors) with eigenvalues in descending order
    and eigenvectors as matrix columns. Eigenvalues below
    ZERO_EIGENVALUE_CUTOFF * lambda_max count as zero and are excluded, so the
    returned count may be less than `rank`.
    """
    m = _check_symmetric(as_matrix(m))
    n = m.shape[0]
    if not 0 < rank <= n:
        raise LinalgError(f"rank must be in [1, {n}], got {rank}")

    values: list[float] = []
    vectors: list[np.ndarray] = []
    deflated = m.copy()
    for j in range(rank):
        v = _seeded_unit_vector(n, seed + j)
        lam = float(v @ (deflated @ v))
        converged = False
        for _ in range(POWER_ITERATION_CAP):
            w = deflated @ v
            # Re-orthogonalize against found eigenvectors to stop round-off
            # from drifting back into deflated directions.
            for u in vectors:
                w -= (u @ w) * u
            norm = np.linalg.norm(w)
            if norm == 0.0:
                lam = 0.0
                converged = True
                break
            v = w / norm
            mv = deflated @ v
            for u in vectors:
                mv -= (u @ mv) * u
            lam = float(v @ mv)
            # Stop on the reconstruction residual within the deflated
            # subspace: the eigenvalue converges much faster than the vector,
            # and the contract is on the vector.
            if np.linalg.norm(mv - lam * v) <= 0.02 * EIGENPAIR_RESIDUAL_TOL * max(1.0, lam):
                converged = True
                break
        if not converged:
            raise LinalgError(
                f"eigenpair {j} did not converge within {POWER_ITERATION_CAP} "
                f"iterations; last estimate {lam!r}"
            )
        if values and lam < ZERO_EIGENVALUE_CUTOFF * max(values[0], 0.0):
            break
        if not values and lam <= 0.0:
            break  # PSD matrix with non-positive dominant value is all zero
        values.append(lam)
        vectors.append(v.copy())
        deflated = deflated - lam * np.outer(v, v)

    if not vectors:
        return [], np.zeros((n, 0))
    return values, np.column_stack(vectors)


@dataclass(frozen=True)
class WeightedMetric:
    """Quadratic-form distance sqrt((a-b)^T D (a-b)) for symmetric PSD D."""

    d: np.ndarray

    def __post_init__(self):
        d = as_matrix(self.d)
        if d.shape[0] != d.shape[1]:
            raise LinalgError(f"metric matrix must be square, got {d.shape}")
        gap = np.abs(d - d.T)
        if np.any(gap > 1e-12 * np.maximum(1.0, np.abs(d))):
            raise LinalgError("metric matrix is not symmetric")
        rng = np.random.default_rng(1234)
        for _ in range(100):
            v = rng.standard_normal(d.shape[0])
            form = float(v @ d @ v)
            if form < NEGATIVE_FORM_CLAMP * float(v @ v):
                raise LinalgError("metric matrix is not positive semi-definite")
        object.__setattr__(self, "d", d)

    @property
    def dim(self) -> int:
        return self.d.shape[0]


def weighted_distance(a, b, metric: WeightedMetric) -> float:
    """sqrt((a-b)^T D (a-b)), clamping tiny negative forms in [-1e-9, 0) to 0."""
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise LinalgError(f"vector dimensions differ: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] != metric.dim:
        raise LinalgError(
            f"vector dimension {a.shape[0]} does not match metric dimension {metric.dim}"
        )
    delta = a - b
    form = float(delta @ metric.d @ delta)
    if form < 0.0:
        if form < NEGATIVE_FORM_CLAMP:
            raise LinalgError(f"quadratic form {form!r} is negative beyond round-off")
        form = 0.0
    return float(np.sqrt(form))


def euclidean_distance(a, b) -> float:
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise LinalgError(f"vector dimensions differ: {a.shape[0]} vs {b.shape[0]}")
    return float(np.linalg.norm(a - b))
