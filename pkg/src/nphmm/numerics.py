"""Small dense linear-algebra kernels used by the spectral estimator.

Everything here works on plain ``numpy`` arrays and targets the small regime
of the estimator (K <= 10 hidden states, M <= 512 basis functions).
"""

import numpy as np

from .errors import (
    DimensionError,
    EigenSeparationError,
    RankDeficiencyError,
    StructureError,
)

RANK_TOL = 1e-13
EIG_SEP_TOL = 1e-9


def _sign_fix(vecs):
    """Flip columns so that the largest-magnitude entry of each is positive."""
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def top_k_right_singular(a, k):
    """Orthonormal right singular vectors of ``a`` for its ``k`` largest singular values.

    Returns an ``(a.shape[1], k)`` matrix. Columns follow the sign convention
    of :func:`_sign_fix` so that results are reproducible.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {a.shape}")
    if k < 1 or k > min(a.shape):
        raise DimensionError(f"k={k} outside [1, {min(a.shape)}] for shape {a.shape}")
    _, s, vt = np.linalg.svd(a)
    if s[k - 1] < RANK_TOL:
        raise RankDeficiencyError(
            f"sigma_{k} = {s[k - 1]:.3e} below rank threshold {RANK_TOL:g}",
            condition=s[0] / s[k - 1] if s[k - 1] > 0 else np.inf,
        )
    return _sign_fix(vt[:k].T)


def real_eig_distinct(c, tol=EIG_SEP_TOL):
    """Eigendecomposition of a square matrix with real, well separated eigenvalues.

    Returns ``(r, lam)`` with ``c @ r = r @ diag(lam)``, unit-norm columns in
    ``r`` and ``lam`` sorted in decreasing order. Raises
    :class:`EigenSeparationError` when an eigenvalue has an imaginary part or
    two eigenvalues are within ``tol`` of each other.
    """
    c = np.asarray(c, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {c.shape}")
    lam, vecs = np.linalg.eig(c)
    if np.any(np.abs(lam.imag) > tol):
        raise EigenSeparationError(f"complex eigenvalues: {lam}")
    order = np.argsort(-lam.real, kind="stable")
    lam = lam.real[order]
    vecs = vecs[:, order].real
    if lam.size > 1:
        gap = np.min(-np.diff(lam))
        if gap <= tol:
            raise EigenSeparationError(f"eigenvalue gap {gap:.3e} below {tol:g}")
    vecs = vecs / np.linalg.norm(vecs, axis=0)
    return _sign_fix(vecs), lam


def eig_gaps(lam):
    """Smallest pairwise distance between sorted eigenvalues (``inf`` if K=1)."""
    lam = np.sort(np.asarray(lam, dtype=float))
    return float(np.min(np.diff(lam))) if lam.size > 1 else np.inf


def project_simplex(v):
    """Euclidean projection of a vector onto the probability simplex.

    Sort-and-threshold algorithm: find the largest ``j`` such that
    ``u_j - (sum_{i<=j} u_i - 1) / j > 0`` over the decreasingly sorted ``u``
    and shift by the matching threshold.
    """
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def project_row_stochastic(a):
    """Frobenius-nearest row-stochastic matrix: each row projected onto the simplex."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {a.shape}")
    return np.vstack([project_simplex(row) for row in a])


def is_primitive(q):
    """True when some power ``q^j`` with ``j <= K^2`` is entrywise positive.

    Equivalent to irreducible and aperiodic for a nonnegative square matrix
    (Wielandt's bound gives ``(K-1)^2 + 1 <= K^2``).
    """
    pattern = (np.asarray(q) > 0).astype(np.int64)
    k = pattern.shape[0]
    power = pattern.copy()
    for _ in range(k * k):
        if power.all():
            return True
        power = (power @ pattern > 0).astype(np.int64)
    return bool(power.all())


def stationary_of(q):
    """Stationary distribution of an irreducible aperiodic transition matrix.

    Solves the stacked system ``[I - q^T; 1^T] pi = (0, ..., 0, 1)`` in the
    least-squares sense.
    """
    q = np.asarray(q, dtype=float)
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {q.shape}")
    if not is_primitive(q):
        raise StructureError("transition matrix is not irreducible and aperiodic")
    return _stationary_lstsq(q)


def _stationary_lstsq(q):
    k = q.shape[0]
    a = np.vstack([np.eye(k) - q.T, np.ones((1, k))])
    b = np.zeros(k + 1)
    b[-1] = 1.0
    pi = pinv_solve(a, b)
    pi = np.maximum(pi, 0.0)
    return pi / pi.sum()


def haar_orthogonal(k, seed):
    """Haar-distributed ``k x k`` real orthogonal matrix, deterministic per ``seed``.

    QR of a standard Gaussian matrix with the signs of ``R``'s diagonal moved
    into ``Q`` (Mezzadri's correction), which makes the law exactly Haar.
    """
    if k < 1:
        raise DimensionError(f"k must be >= 1, got {k}")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((k, k))
    q, r = np.linalg.qr(z)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d


def pinv_solve(a, b):
    """Least-squares solution of ``a x = b``.

    Square, well-conditioned ``a`` goes through an exact solve; a square
    matrix with ``sigma_min <= 1e-13`` raises :class:`RankDeficiencyError`.
    Rectangular systems use ``lstsq``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or a.shape[0] != b.shape[0]:
        raise DimensionError(f"incompatible shapes {a.shape} and {b.shape}")
    if a.shape[0] == a.shape[1]:
        s = np.linalg.svd(a, compute_uv=False)
        if s[-1] <= RANK_TOL:
            raise RankDeficiencyError(
                f"singular matrix (sigma_min={s[-1]:.3e})",
                condition=s[0] / s[-1] if s[-1] > 0 else np.inf,
            )
        return np.linalg.solve(a, b)
    x, *_ = np.linalg.lstsq(a, b, rcond=None)
    return x


def checked_inverse(a, name="matrix"):
    """Inverse of a square matrix together with its 2-norm condition number.

    Raises :class:`RankDeficiencyError` carrying the condition number when
    the smallest singular value is below the rank threshold.
    """
    a = np.asarray(a, dtype=float)
    s = np.linalg.svd(a, compute_uv=False)
    cond = s[0] / s[-1] if s[-1] > 0 else np.inf
    if s[-1] <= RANK_TOL:
        raise RankDeficiencyError(
            f"{name} is rank deficient (sigma_min={s[-1]:.3e})", condition=cond
        )
    return np.linalg.inv(a), float(cond)
