"""Ground-truth hidden Markov models with beta-mixture emissions on [0, 1].

Holds the simulator, emission densities, population moments and the Markov
chain constants that enter the filtering/smoothing error bounds.
"""

import bisect
import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .bases import _check_domain, project_density, quadrature_for
from .errors import DimensionError, DomainError, StructureError
from .numerics import is_primitive, stationary_of
from .spectral import MomentSet

STATIONARY_TOL = 1e-10


@dataclass(frozen=True)
class HmmSpec:
    """Finite-state HMM.

    ``emissions[x]`` is a tuple of ``(weight, alpha, beta)`` triples describing
    the beta mixture emitted from state ``x``. States are 0-based.
    """

    q: np.ndarray
    pi: np.ndarray
    emissions: tuple
    stationary: bool = True

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        pi = np.array(self.pi, dtype=float)
        k = q.shape[0]
        if q.shape != (k, k) or pi.shape != (k,) or len(self.emissions) != k:
            raise DimensionError("q, pi and emissions disagree on the number of states")
        if np.any(q < 0) or np.any(q > 1) or not np.allclose(q.sum(axis=1), 1.0, atol=1e-12):
            raise ValueError("q must be row-stochastic")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-12:
            raise ValueError("pi must be a probability vector")
        if self.stationary and np.max(np.abs(pi @ q - pi)) > STATIONARY_TOL:
            raise ValueError("pi is not stationary for q")
        emissions = []
        for mix in self.emissions:
            mix = tuple((float(w), float(a), float(b)) for w, a, b in mix)
            weights = np.array([w for w, _, _ in mix])
            if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
                raise ValueError("mixture weights must lie on the simplex")
            if any(a <= 0 or b <= 0 for _, a, b in mix):
                raise ValueError("beta parameters must be positive")
            emissions.append(mix)
        q.flags.writeable = False
        pi.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "emissions", tuple(emissions))

    @property
    def k(self):
        return self.q.shape[0]

    @classmethod
    def from_stationary(cls, q, emissions):
        """Build the model started from the stationary law of ``q``."""
        return cls(q, stationary_of(q), emissions)

    def permuted(self, perm):
        """Relabel states: new state ``i`` is old state ``perm[i]``."""
        perm = np.asarray(perm)
        return HmmSpec(
            self.q[np.ix_(perm, perm)],
            self.pi[perm],
            tuple(self.emissions[i] for i in perm),
            self.stationary,
        )

    def to_dict(self):
        return {
            "K": self.k,
            "q": self.q.tolist(),
            "pi": self.pi.tolist(),
            "emissions": [
                [{"weight": w, "alpha": a, "beta": b} for w, a, b in mix]
                for mix in self.emissions
            ],
        }

    @classmethod
    def from_dict(cls, d):
        q = np.asarray(d["q"], dtype=float)
        if "K" in d and q.shape[0] != d["K"]:
            raise DimensionError(f"K={d['K']} but q has {q.shape[0]} rows")
        emissions = tuple(
            tuple((c["weight"], c["alpha"], c["beta"]) for c in mix)
            for mix in d["emissions"]
        )
        pi = d.get("pi")
        pi = stationary_of(q) if pi is None else pi
        return cls(q, pi, emissions, d.get("stationary", True))

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def section4_hmm():
    """The two-state model with beta(2,5) and beta(4,3) emissions."""
    q = np.array([[0.4, 0.6], [0.8, 0.2]])
    return HmmSpec.from_stationary(q, (((1.0, 2.0, 5.0),), ((1.0, 4.0, 3.0),)))


@dataclass(frozen=True)
class Trajectory:
    hidden: np.ndarray
    obs: np.ndarray
    seed: int

    def __len__(self):
        return len(self.obs)


def sample_trajectory(hmm, n, seed):
    """Simulate ``n`` steps of the chain and its emissions.

    ``X_1 ~ pi``, ``X_{j+1} ~ q(X_j, .)`` and, given the chain, each
    ``Y_j`` is drawn independently from the emission of ``X_j``. Beta
    variates come from two gamma draws.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    u = rng.random(n).tolist()
    last = hmm.k - 1
    rows = np.cumsum(hmm.q, axis=1).tolist()
    hidden = [min(bisect.bisect_right(np.cumsum(hmm.pi).tolist(), u[0]), last)]
    for j in range(1, n):
        hidden.append(min(bisect.bisect_right(rows[hidden[-1]], u[j]), last))
    hidden = np.array(hidden, dtype=np.int64)
    obs = _sample_emissions(hmm, hidden, rng)
    return Trajectory(hidden, obs, seed)


def _sample_emissions(hmm, hidden, rng):
    obs = np.empty(hidden.size)
    for x, mix in enumerate(hmm.emissions):
        idx = np.nonzero(hidden == x)[0]
        if idx.size == 0:
            continue
        weights = np.array([w for w, _, _ in mix])
        comp = rng.choice(len(mix), size=idx.size, p=weights)
        alphas = np.array([a for _, a, _ in mix])[comp]
        betas = np.array([b for _, _, b in mix])[comp]
        g1 = rng.standard_gamma(alphas)
        g2 = rng.standard_gamma(betas)
        obs[idx] = g1 / (g1 + g2)
    return obs


def beta_pdf(y, a, b):
    """Beta(a, b) density evaluated in log form (stable for ``y`` near 0 or 1)."""
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        log_f = special.xlogy(a - 1.0, y) + special.xlog1py(b - 1.0, -y) - special.betaln(a, b)
        return np.exp(log_f)


def emission_matrix(hmm, y):
    """Densities ``f_x(y)`` for every observation (rows) and state (columns)."""
    y = np.atleast_1d(_check_domain(y))
    out = np.zeros((y.size, hmm.k))
    for x, mix in enumerate(hmm.emissions):
        for w, a, b in mix:
            out[:, x] += w * beta_pdf(y, a, b)
    return out


def eval_emission(hmm, x, y):
    """Density of state ``x`` at a single point ``y``."""
    return float(emission_matrix(hmm, y)[0, x])


def c_star(hmm, y):
    """``min_x sum_x' q(x, x') f_x'(y)``, vectorized over ``y``."""
    scalar = np.ndim(y) == 0
    out = (emission_matrix(hmm, y) @ hmm.q.T).min(axis=1)
    return float(out[0]) if scalar else out


def coefficient_matrix(hmm, spec, quad=None):
    """``O(m, x) = <f_x, phi_m>``, the emission projections as an M x K matrix."""
    quad = quadrature_for(spec) if quad is None else quad
    cols = [
        project_density(lambda y, x=x: emission_matrix(hmm, y)[:, x], spec, quad).coefficients
        for x in range(hmm.k)
    ]
    return np.column_stack(cols)


@dataclass(frozen=True)
class MarkovConstants:
    """Forgetting and mixing constants of a transition matrix.

    ``delta_star``, ``rho_star`` and ``c_big_star`` are ``None`` when the
    smallest transition probability is zero (or the chain has one state).
    """

    delta_star: float
    rho_star: float
    c_big_star: float
    g_ps: float
    t_mix: float
    k_max: int
    g_ps_argmax: int
    prop_constants_available: bool = field(default=True)

    def to_dict(self):
        return {
            "delta_star": self.delta_star,
            "rho_star": self.rho_star,
            "c_big_star": self.c_big_star,
            "g_ps": self.g_ps,
            "t_mix": self.t_mix,
            "k_max": self.k_max,
            "g_ps_argmax": self.g_ps_argmax,
            "prop_constants_available": self.prop_constants_available,
        }


def forgetting_constants(delta):
    """``(rho, C)`` from a minimal transition probability ``delta``."""
    rho = 1.0 - delta / (1.0 - delta)
    return rho, 4.0 * (1.0 - delta) / delta


def spectral_gap(a, pi=None):
    """``1 - (largest eigenvalue other than 1)`` of a reversible transition matrix.

    ``a`` must be self-adjoint in ``L2(pi)`` (``pi=None`` means symmetric), so
    its eigenvalues are real and come from the symmetrized matrix
    ``D_pi^{1/2} a D_pi^{-1/2}``. Returns 0 when eigenvalue 1 is repeated.
    """
    a = np.asarray(a, dtype=float)
    if pi is None:
        sym = 0.5 * (a + a.T)
    else:
        d = np.sqrt(pi)
        sym = (d[:, None] * a) / d[None, :]
        sym = 0.5 * (sym + sym.T)
    lam = np.sort(np.linalg.eigvalsh(sym))[::-1]
    if lam.size == 1:
        return 1.0
    if abs(lam[1] - 1.0) < 1e-12:
        return 0.0
    return float(1.0 - lam[1])


def pseudo_spectral_gap(q, pi, k_max=50):
    """``max_{1<=j<=k_max} G(D_pi^{-1} (q^T)^j D_pi q^j) / j`` and its argmax."""
    q = np.asarray(q, dtype=float)
    best, arg = -np.inf, 0
    qj = np.eye(q.shape[0])
    for j in range(1, k_max + 1):
        qj = qj @ q
        a = (qj.T * pi[None, :]) @ qj / pi[:, None]
        g = spectral_gap(a, pi) / j
        if g > best:
            best, arg = g, j
    return float(best), arg


def markov_constants(hmm, k_max=50):
    """Forgetting constants, pseudo spectral gap and mixing time of ``hmm.q``."""
    q = hmm.q
    if not is_primitive(q):
        raise StructureError("transition matrix is not irreducible and aperiodic")
    pi = stationary_of(q)
    g_ps, arg = pseudo_spectral_gap(q, pi, k_max)
    t_mix = (1.0 + 3.0 * np.log(2.0) - np.log(pi.min())) / g_ps
    delta = float(q.min())
    if delta > 0 and hmm.k > 1:
        rho, cbig = forgetting_constants(delta)
        return MarkovConstants(delta, rho, cbig, g_ps, float(t_mix), k_max, arg, True)
    return MarkovConstants(None, None, None, g_ps, float(t_mix), k_max, arg, False)


def c_star_constant(hmm, delta, k_max=50):
    """Concentration constant ``sqrt(2/G_ps) + 2 sqrt(-2 T_mix log delta)``."""
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    mc = markov_constants(hmm, k_max)
    return float(np.sqrt(2.0 / mc.g_ps) + 2.0 * np.sqrt(-2.0 * mc.t_mix * np.log(delta)))


def population_moments(o, q, pi):
    """Exact moments of three consecutive observations from the factorizations

    ``L = O pi``, ``N = O D_pi Q O^T``, ``P = O D_pi Q^2 O^T`` and
    ``M(., b, .) = O D_pi Q D_{O(b, .)} Q O^T``.
    """
    o = np.asarray(o, dtype=float)
    q = np.asarray(q, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if o.ndim != 2 or q.shape != (o.shape[1], o.shape[1]) or pi.shape != (o.shape[1],):
        raise DimensionError(f"shapes o={o.shape}, q={q.shape}, pi={pi.shape} disagree")
    left = o * pi[None, :]
    l_vec = o @ pi
    n_mat = left @ q @ o.T
    p_mat = left @ q @ q @ o.T
    a = left @ q  # (M, K): O D_pi Q
    b = q @ o.T  # (K, M): Q O^T
    m3 = np.einsum("ax,bx,xc->abc", a, o, b)
    return MomentSet(l_vec, n_mat, p_mat, m3, None)


def population_moments_for(hmm, spec, quad=None):
    """Population moments of ``hmm`` in the basis ``spec``."""
    moments = population_moments(coefficient_matrix(hmm, spec, quad), hmm.q, hmm.pi)
    return dataclasses.replace(moments, basis=spec)
