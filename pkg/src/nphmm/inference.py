"""Forward filtering and backward marginal smoothing.

The recursions run with either the true parameters or plug-in estimates.
Each step is normalized; when a normalizer underflows the step falls back
to the predictive distribution (or uniform) and is reported.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .bases import eval_basis
from .errors import DimensionError
from .model import emission_matrix

UNDERFLOW = 1e-300


@dataclass(frozen=True)
class EmissionEval:
    """Pointwise evaluator ``y -> (f_1(y), ..., f_K(y))``.

    ``provenance`` is ``"true-density"`` or ``"projection-estimate"``.
    Projection estimates may be negative; the recursions clamp them at zero.
    """

    func: object
    k: int
    provenance: str

    def __call__(self, y):
        return np.asarray(self.func(np.atleast_1d(y)), dtype=float)


def true_emissions(hmm):
    return EmissionEval(lambda y: emission_matrix(hmm, y), hmm.k, "true-density")


def estimated_emissions(est, perm=None):
    """Reconstructed densities of ``est``; ``perm[x]`` picks the column for state ``x``."""
    o_hat = est.o_hat if perm is None else est.o_hat[:, np.asarray(perm)]
    return EmissionEval(
        lambda y: eval_basis(est.basis, y) @ o_hat, o_hat.shape[1], "projection-estimate"
    )


def _likelihoods(emit, obs, k):
    lik = emit(obs) if callable(emit) else np.asarray(emit, dtype=float)
    if lik.shape != (len(obs), k):
        raise DimensionError(f"emission values have shape {lik.shape}, expected {(len(obs), k)}")
    clamped = int(np.count_nonzero(lik < 0))
    return np.maximum(lik, 0.0), clamped


def forward_filter(q, pi, emit, obs):
    """Filtering distributions ``P(X_k | Y_{1:k})`` for every ``k``.

    ``emit`` is an :class:`EmissionEval` (or any callable returning an
    ``(n, K)`` array) or a precomputed ``(n, K)`` likelihood array. Returns
    ``(rows, degenerate_steps)`` with 0-based step indices.
    """
    q = np.asarray(q, dtype=float)
    pi = np.asarray(pi, dtype=float)
    obs = np.asarray(obs, dtype=float)
    k = q.shape[0]
    if q.shape != (k, k) or pi.shape != (k,):
        raise DimensionError(f"q {q.shape} and pi {pi.shape} disagree")
    if obs.size == 0:
        raise DimensionError("no observations")
    lik, _ = _likelihoods(emit, obs, k)
    return _forward(q, pi, lik)


def _forward(q, pi, lik):
    n, k = lik.shape
    rows = np.empty((n, k))
    degenerate = []
    pred = pi
    for t in range(n):
        unnorm = pred * lik[t]
        z = unnorm.sum()
        if z < UNDERFLOW:
            degenerate.append(t)
            zp = pred.sum()
            rows[t] = pred / zp if zp >= UNDERFLOW else np.full(k, 1.0 / k)
        else:
            rows[t] = unnorm / z
        pred = rows[t] @ q
    return rows, degenerate


def backward_smooth(q, filt):
    """Marginal smoothing distributions ``P(X_k | Y_{1:n})`` from filter rows.

    Uses the backward kernel ``B(u, v) = q(v, u) filt_k(v) / sum_z q(z, u) filt_k(z)``.
    Returns ``(rows, degenerate_steps)``; a step is degenerate when some
    denominator underflows, in which case the corresponding kernel row is
    replaced by the uniform distribution.
    """
    q = np.asarray(q, dtype=float)
    filt = np.asarray(filt, dtype=float)
    n, k = filt.shape
    if q.shape != (k, k):
        raise DimensionError(f"q {q.shape} does not match filter rows {filt.shape}")
    rows = np.empty_like(filt)
    rows[-1] = filt[-1]
    degenerate = []
    for t in range(n - 2, -1, -1):
        pred = filt[t] @ q  # denominator for each next state u
        bad = pred < UNDERFLOW
        ratio = np.where(bad, 0.0, rows[t + 1] / np.where(bad, 1.0, pred))
        rows[t] = filt[t] * (q @ ratio)
        if bad.any():
            degenerate.append(t)
            rows[t] += rows[t + 1][bad].sum() / k
        s = rows[t].sum()
        rows[t] /= s
    return rows, sorted(degenerate)


def tv_distance(p, r):
    """Total variation as total mass ``sum_x |p(x) - r(x)|`` (range [0, 2])."""
    p, r = np.asarray(p, dtype=float), np.asarray(r, dtype=float)
    if p.shape[-1] != r.shape[-1]:
        raise DimensionError(f"dimension mismatch {p.shape} vs {r.shape}")
    return np.abs(p - r).sum(axis=-1)


def tv_distance_half(p, r):
    """Half-normalized total variation, in [0, 1]."""
    return 0.5 * tv_distance(p, r)


@dataclass
class PosteriorTrack:
    """Filtering and smoothing rows for one observation sequence.

    ``degenerate_steps`` lists (0-based) steps where either recursion fell
    back; ``clamped`` counts negative emission values set to zero.
    """

    filter: np.ndarray
    smooth: np.ndarray
    degenerate_steps: list = field(default_factory=list)
    clamped: int = 0

    def __len__(self):
        return self.filter.shape[0]

    def permuted(self, perm):
        """Columns reordered so that new state ``x`` is old state ``perm[x]``."""
        perm = np.asarray(perm)
        return PosteriorTrack(
            self.filter[:, perm], self.smooth[:, perm], list(self.degenerate_steps), self.clamped
        )

    def to_csv(self, path, extra_columns=None, header_comment=None):
        """Long-format CSV: ``time, state, filter_prob, smooth_prob, degenerate_flag``.

        ``extra_columns`` maps a column name to an ``(n, K)`` or ``(n,)`` array.
        """
        extra_columns = extra_columns or {}
        n, k = self.filter.shape
        degenerate = set(self.degenerate_steps)
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            writer = csv.writer(fh)
            writer.writerow(
                ["time", "state", "filter_prob", "smooth_prob", *extra_columns, "degenerate_flag"]
            )
            for t in range(n):
                for x in range(k):
                    extras = []
                    for values in extra_columns.values():
                        v = values[t, x] if np.ndim(values) == 2 else values[t]
                        extras.append(_fmt(v))
                    writer.writerow(
                        [t + 1, x, _fmt(self.filter[t, x]), _fmt(self.smooth[t, x]), *extras,
                         int(t in degenerate)]
                    )


def _fmt(v):
    return repr(float(v))


def posterior_track(q, pi, emit, obs):
    """Forward filter followed by the backward smoother."""
    q = np.asarray(q, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if obs.size == 0:
        raise DimensionError("no observations")
    lik, clamped = _likelihoods(emit, obs, q.shape[0])
    filt, deg_f = _forward(q, np.asarray(pi, dtype=float), lik)
    smooth, deg_s = backward_smooth(q, filt)
    return PosteriorTrack(filt, smooth, sorted(set(deg_f) | set(deg_s)), clamped)


def oracle_posteriors(hmm, obs):
    """Posterior track computed with the true parameters."""
    return posterior_track(hmm.q, hmm.pi, true_emissions(hmm), obs)


def plugin_posteriors(est, obs):
    """Posterior track with ``(q_hat, pi_hat)`` and the clamped reconstructed emissions."""
    return posterior_track(est.q_hat, est.pi_hat, estimated_emissions(est), obs)
