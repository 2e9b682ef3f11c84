"""Method-of-moments estimation of an HMM with nonparametric emissions.

The estimator works on projected moments of three consecutive observations:

* ``L(a) = E[phi_a(Y_1)]``
* ``N(a, b) = E[phi_a(Y_1) phi_b(Y_2)]``
* ``P(a, c) = E[phi_a(Y_1) phi_c(Y_3)]``
* ``M(a, b, c) = E[phi_a(Y_1) phi_b(Y_2) phi_c(Y_3)]``

:func:`fit` recovers the emission coefficients, the transition matrix and
the stationary law from these (up to a relabelling of the hidden states)
with one SVD, a few K x K inversions and one diagonalization.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .bases import BasisSpec, CoeffVec, eval_basis
from .errors import (
    EigenSeparationError,
    DiagonalizationError,
    EstimationError,
    InsufficientDataError,
    RankDeficiencyError,
    StructureError,
)
from .numerics import (
    EIG_SEP_TOL,
    _stationary_lstsq,
    checked_inverse,
    eig_gaps,
    haar_orthogonal,
    project_row_stochastic,
    project_simplex,
    real_eig_distinct,
    stationary_of,
    top_k_right_singular,
)

PI_TILDE_FLOOR = 1e-10
_CHUNK = 8192


@dataclass(frozen=True)
class MomentSet:
    """Vector ``l``, matrices ``n`` and ``p`` and tensor ``m3`` of basis moments.

    ``sample_count`` is the number of triples ``p`` for empirical moments and
    ``None`` for exact (population) moments. ``basis`` is recorded in the
    estimates fitted from these moments.
    """

    l: np.ndarray
    n: np.ndarray
    p: np.ndarray
    m3: np.ndarray
    sample_count: int = None
    basis: BasisSpec = None

    @property
    def size(self):
        return self.l.shape[0]


def empirical_moments(obs, spec):
    """Empirical moments from the overlapping triples of one trajectory.

    With ``p = len(obs) - 2`` each moment averages over ``s = 1..p`` the
    products ``phi_a(Y_s)``, ``phi_b(Y_{s+1})``, ``phi_c(Y_{s+2})``.
    """
    obs = np.asarray(obs, dtype=float)
    if obs.size < 3:
        raise InsufficientDataError(f"need at least 3 observations, got {obs.size}")
    phi = eval_basis(spec, obs)
    p = obs.size - 2
    m = spec.size
    a, b, c = phi[:p], phi[1 : p + 1], phi[2:]
    m3 = np.zeros((m * m, m))
    for start in range(0, p, _CHUNK):
        sl = slice(start, start + _CHUNK)
        ab = (a[sl, :, None] * b[sl, None, :]).reshape(-1, m * m)
        m3 += ab.T @ c[sl]
    return MomentSet(
        a.mean(axis=0),
        a.T @ b / p,
        a.T @ c / p,
        m3.reshape(m, m, m) / p,
        p,
        spec,
    )


@dataclass
class Diagnostics:
    sigma_k_p: float = float("nan")
    eig_gap: float = float("nan")
    cond_utpu: float = float("nan")
    cond_r: float = float("nan")
    cond_uto: float = float("nan")
    cond_uto_dpi: float = float("nan")
    offdiag_residual: float = float("nan")
    redraws: int = 0
    seed: int = 0
    theta_seed: int = 0
    pi_hat_unique: bool = True
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = {k: v for k, v in self.__dict__.items() if k != "extra"}
        d.update(self.extra)
        return d


@dataclass(frozen=True)
class SpectralEstimate:
    """Output of :func:`fit`.

    ``o_hat`` holds the emission coefficients (one column per estimated
    state), ``pi_tilde`` the raw stationary surrogate (no sign or simplex
    guarantee), ``q_hat`` the projected transition matrix and ``pi_hat`` its
    stationary law.
    """

    basis: BasisSpec
    o_hat: np.ndarray
    pi_tilde: np.ndarray
    q_hat: np.ndarray
    pi_hat: np.ndarray
    diagnostics: Diagnostics

    @property
    def k(self):
        return self.o_hat.shape[1]

    def to_dict(self):
        return {
            "basis": self.basis.to_dict(),
            "o_hat": self.o_hat.tolist(),
            "pi_tilde": self.pi_tilde.tolist(),
            "q_hat": self.q_hat.tolist(),
            "pi_hat": self.pi_hat.tolist(),
            "diagnostics": _jsonable(self.diagnostics.to_dict()),
        }

    @classmethod
    def from_dict(cls, d):
        diag = dict(d.get("diagnostics", {}))
        known = {k: diag.pop(k) for k in list(diag) if k in Diagnostics.__dataclass_fields__}
        return cls(
            BasisSpec.from_dict(d["basis"]),
            np.asarray(d["o_hat"], dtype=float),
            np.asarray(d["pi_tilde"], dtype=float),
            np.asarray(d["q_hat"], dtype=float),
            np.asarray(d["pi_hat"], dtype=float),
            Diagnostics(**known, extra=diag),
        )

    def to_json(self, path, **extra):
        d = self.to_dict()
        d.update(extra)
        with open(path, "w") as fh:
            json.dump(d, fh, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _jsonable(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.floating, np.integer, np.bool_)):
            v = v.item()
        if isinstance(v, float) and not np.isfinite(v):
            v = str(v)
        out[k] = v
    return out


def _theta_seed(seed, attempt):
    if attempt == 0:
        return seed
    return int(np.random.SeedSequence([seed, attempt]).generate_state(1)[0])


def fit(moments, k, seed=0, retries=8):
    """Estimate ``(O, pi_tilde, Q, pi)`` from a :class:`MomentSet`.

    1. ``U``: top-k right singular vectors of ``P``.
    2. ``B(b) = (U^T P U)^{-1} U^T M(., b, .) U`` for every ``b``.
    3. ``C(x) = sum_b (U Theta)(b, x) B(b)`` with ``Theta`` Haar orthogonal.
    4. ``R``: unit-column eigenvectors of ``C(1)``; ``Lambda(x, x')`` is the
       ``x'``-th diagonal entry of ``R^{-1} C(x) R`` and ``O = U Theta Lambda``.
    5. ``pi_tilde = (U^T O)^{-1} U^T L``.
    6. ``Q = Pi_TM((U^T O D_pi_tilde)^{-1} U^T N U (O^T U)^{-1})`` and ``pi``
       its stationary law.

    When the eigenvalues of ``C(1)`` are not separated, ``Theta`` is redrawn
    from a seed derived from ``(seed, attempt)``, at most ``retries`` times.
    """
    diag = Diagnostics(seed=seed)
    if moments.size < k:
        raise EstimationError(f"basis size {moments.size} smaller than K={k}")
    try:
        sv = np.linalg.svd(moments.p, compute_uv=False)
        diag.sigma_k_p = float(sv[k - 1])
        u = top_k_right_singular(moments.p, k)
        utpu_inv, diag.cond_utpu = checked_inverse(u.T @ moments.p @ u, "U^T P U")
    except RankDeficiencyError as exc:
        raise EstimationError(str(exc), _diag_with(diag, exc)) from exc

    # B[b] = (U^T P U)^{-1} U^T M(., b, .) U, stacked over b
    b_ops = np.einsum("ij,ja,abc,ck->bik", utpu_inv, u.T, moments.m3, u, optimize=True)

    for attempt in range(retries + 1):
        diag.theta_seed = _theta_seed(seed, attempt)
        theta = haar_orthogonal(k, diag.theta_seed)
        w = u @ theta
        c_ops = np.einsum("bx,bij->xij", w, b_ops)
        try:
            r, lam = real_eig_distinct(c_ops[0], EIG_SEP_TOL)
        except EigenSeparationError:
            diag.redraws = attempt + 1
            continue
        diag.redraws = attempt
        diag.eig_gap = eig_gaps(lam)
        break
    else:
        raise DiagonalizationError(
            f"no separated spectrum after {retries + 1} rotations", diag.to_dict()
        )

    try:
        r_inv, diag.cond_r = checked_inverse(r, "R")
        conj = np.einsum("ij,xjk,kl->xil", r_inv, c_ops, r)
        lam_mat = np.einsum("xii->xi", conj)
        off = conj - np.einsum("xi,ij->xij", lam_mat, np.eye(k))
        diag.offdiag_residual = float(np.max(np.abs(off)))
        o_hat = w @ lam_mat

        uto = u.T @ o_hat
        uto_inv, diag.cond_uto = checked_inverse(uto, "U^T O")
        pi_tilde = uto_inv @ (u.T @ moments.l)
        if np.min(np.abs(pi_tilde)) < PI_TILDE_FLOOR:
            raise EstimationError(
                f"pi_tilde has an entry below {PI_TILDE_FLOOR:g} in magnitude",
                diag.to_dict(),
            )
        left_inv, diag.cond_uto_dpi = checked_inverse(uto * pi_tilde[None, :], "U^T O D_pi")
        right_inv, _ = checked_inverse(o_hat.T @ u, "O^T U")
    except RankDeficiencyError as exc:
        raise EstimationError(str(exc), _diag_with(diag, exc)) from exc

    q_raw = left_inv @ (u.T @ moments.n @ u) @ right_inv
    q_hat = project_row_stochastic(q_raw)
    try:
        pi_hat = stationary_of(q_hat)
    except StructureError:
        # reducible or periodic projection: keep a stationary vector, flag it
        diag.pi_hat_unique = False
        pi_hat = project_simplex(_stationary_lstsq(q_hat))
    return SpectralEstimate(moments.basis, o_hat, pi_tilde, q_hat, pi_hat, diag)


def _diag_with(diag, exc):
    d = diag.to_dict()
    d["condition"] = getattr(exc, "condition", float("inf"))
    return d


def estimate(obs, spec, k, seed=0, retries=8):
    """Empirical moments of ``obs`` in basis ``spec`` followed by :func:`fit`."""
    return fit(empirical_moments(obs, spec), k, seed, retries)


def emission_estimates(est):
    """The estimated emission densities as coefficient vectors, one per state."""
    return [CoeffVec(est.basis, est.o_hat[:, x].copy()) for x in range(est.k)]
