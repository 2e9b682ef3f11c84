"""Error measurement against a known generating model.

Label alignment, emission risks, the right-hand sides of the filtering and
smoothing error bounds, and Monte Carlo concentration studies.
"""

import csv
import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .bases import eval_basis, quadrature_for
from .errors import CapabilityError, DimensionError, EstimationError
from .inference import (
    oracle_posteriors,
    posterior_track,
    tv_distance,
)
from .model import (
    coefficient_matrix,
    c_star,
    emission_matrix,
    forgetting_constants,
    markov_constants,
    population_moments,
    sample_trajectory,
)
from .spectral import empirical_moments, fit

C_STAR_FLOOR = 1e-12
MAX_ALIGN_K = 8


@dataclass(frozen=True)
class Alignment:
    """``perm[x]`` is the estimated state matched to true state ``x``."""

    perm: tuple
    column_errors: np.ndarray
    cost: float


def align(o_true, o_hat):
    """Permutation minimizing ``sum_x ||o_true[:, x] - o_hat[:, perm[x]]||_2``.

    Exhaustive search over all K! permutations.
    """
    o_true = np.asarray(o_true, dtype=float)
    o_hat = np.asarray(o_hat, dtype=float)
    if o_true.shape != o_hat.shape:
        raise DimensionError(f"shape mismatch {o_true.shape} vs {o_hat.shape}")
    k = o_true.shape[1]
    if k > MAX_ALIGN_K:
        raise CapabilityError(f"brute-force alignment supports K <= {MAX_ALIGN_K}, got {k}")
    dist = np.linalg.norm(o_true[:, :, None] - o_hat[:, None, :], axis=0)
    best, best_cost = None, np.inf
    for perm in itertools.permutations(range(k)):
        cost = dist[np.arange(k), perm].sum()
        if cost < best_cost:
            best, best_cost = perm, cost
    return Alignment(best, dist[np.arange(k), best], float(best_cost))


@dataclass(frozen=True)
class AlignedEstimate:
    """Estimate relabelled to the true states: ``P_tau pi``, ``P_tau Q P_tau^T``, ``O[:, tau]``."""

    pi: np.ndarray
    q: np.ndarray
    o: np.ndarray
    basis: object
    perm: tuple

    def emissions(self, y):
        return eval_basis(self.basis, y) @ self.o


def aligned(est, alignment):
    perm = np.asarray(alignment.perm)
    return AlignedEstimate(
        est.pi_hat[perm], est.q_hat[np.ix_(perm, perm)], est.o_hat[:, perm], est.basis,
        tuple(alignment.perm),
    )


def align_to_model(hmm, est):
    """Align ``est`` to the projections of the true emissions in its basis."""
    return align(coefficient_matrix(hmm, est.basis), est.o_hat)


@dataclass(frozen=True)
class EmissionRisk:
    """Per-state L2 errors.

    ``coefficient`` is ``||O(., x) - O_hat(., tau x)||_2`` (variance part),
    ``total`` is ``||f_x - f_hat_{tau x}||_2`` measured by quadrature and
    ``bias`` is the projection bias ``||f_x - f_{M,x}||_2``.
    """

    coefficient: np.ndarray
    total: np.ndarray
    bias: np.ndarray


def emission_l2_risk(hmm, est, alignment, quad=None):
    quad = quadrature_for(est.basis) if quad is None else quad
    o_true = coefficient_matrix(hmm, est.basis, quad)
    perm = np.asarray(alignment.perm)
    o_al = est.o_hat[:, perm]
    phi = eval_basis(est.basis, quad.nodes)
    f = emission_matrix(hmm, quad.nodes)
    total = np.sqrt(quad.integrate((f - phi @ o_al) ** 2))
    bias = np.sqrt(quad.integrate((f - phi @ o_true) ** 2))
    coef = np.linalg.norm(o_true - o_al, axis=0)
    return EmissionRisk(coef, total, bias)


def projection_bias(hmm, spec, quad=None):
    """``||f_x - f_{M,x}||_2`` for every state."""
    quad = quadrature_for(spec) if quad is None else quad
    o_true = coefficient_matrix(hmm, spec, quad)
    resid = emission_matrix(hmm, quad.nodes) - eval_basis(spec, quad.nodes) @ o_true
    return np.sqrt(quad.integrate(resid**2))


@dataclass(frozen=True)
class ParameterErrors:
    """Errors of an aligned estimate entering the bounds.

    ``emission_terms[l]`` is ``max_x |f_x(y_l) - f_hat_x(y_l)| / c_star(y_l)``,
    set to ``inf`` where ``c_star < 1e-12`` and the difference is nonzero.
    """

    pi_error: float
    q_error: float
    delta_hat: float
    max_emission_diff: np.ndarray
    c_star: np.ndarray
    emission_terms: np.ndarray

    @property
    def c_star_floored(self):
        return np.isinf(self.emission_terms)


def parameter_errors(hmm, al, obs, emissions_hat=None):
    """Plug-in errors of the aligned estimate ``al`` on the sequence ``obs``.

    ``emissions_hat`` overrides the estimated emission values (an ``(n, K)``
    array in true-state order); by default the reconstruction clamped at zero
    is used, which is what the plug-in recursions consume.
    """
    obs = np.asarray(obs, dtype=float)
    f_true = emission_matrix(hmm, obs)
    f_hat = np.maximum(al.emissions(obs), 0.0) if emissions_hat is None else emissions_hat
    diff = np.abs(f_true - f_hat).max(axis=1)
    cs = np.atleast_1d(c_star(hmm, obs))
    floored = cs < C_STAR_FLOOR
    terms = np.where(floored, np.where(diff > 0, np.inf, 0.0), diff / np.where(floored, 1.0, cs))
    return ParameterErrors(
        float(np.linalg.norm(hmm.pi - al.pi)),
        float(np.linalg.norm(hmm.q - al.q)),
        float(al.q.min()),
        diff,
        cs,
        terms,
    )


def _require_constants(mc):
    if not mc.prop_constants_available:
        raise EstimationError("bound constants unavailable: min transition probability is 0")


def prop1_bounds(mc, errs):
    """Filtering-error bound at every step ``k = 1..n``.

    ``C (rho^{k-1} e_pi / delta + e_Q / (delta (1 - rho)) + sum_{l<=k} rho^{k-l} e_l)``
    with ``e_l`` the emission terms of :func:`parameter_errors`.
    """
    _require_constants(mc)
    delta, rho, cbig = mc.delta_star, mc.rho_star, mc.c_big_star
    e = errs.emission_terms
    acc = np.empty_like(e)
    run = 0.0
    for t, et in enumerate(e):
        run = rho * run + et
        acc[t] = run
    k = np.arange(len(e))
    return cbig * (rho**k * errs.pi_error / delta + errs.q_error / (delta * (1 - rho)) + acc)


def prop2_bounds(mc, errs):
    """Smoothing-error bound at every ``k = 1..n`` for a record of length ``n``.

    ``C (rho^{k-1} e_pi / delta + (1/(1-rho) + 1/(1-rho_hat)) e_Q / delta
    + sum_{l=1}^n r^{|l-k|} e_l)`` with ``r = max(rho, rho_hat)`` and
    ``rho_hat`` built from the smallest entry of the estimated transition
    matrix. A zero ``delta_hat`` makes the bound infinite.
    """
    _require_constants(mc)
    delta, rho, cbig = mc.delta_star, mc.rho_star, mc.c_big_star
    e = errs.emission_terms
    n = len(e)
    if errs.delta_hat <= 0:
        return np.full(n, np.inf)
    rho_hat, _ = forgetting_constants(errs.delta_hat)
    r = max(rho, rho_hat)
    fwd = np.empty(n)
    run = 0.0
    for t in range(n):
        run = r * run + e[t]
        fwd[t] = run
    after = np.zeros(n)  # sum over l > k
    run = 0.0
    for t in range(n - 1, 0, -1):
        run = r * (run + e[t])
        after[t - 1] = run
    k = np.arange(n)
    q_term = (1.0 / (1.0 - rho) + 1.0 / (1.0 - rho_hat)) * errs.q_error / delta
    return cbig * (rho**k * errs.pi_error / delta + q_term + fwd + after)


def prop1_bound(hmm, est, alignment, obs, k):
    """Filtering bound at the single (1-based) step ``k``."""
    mc = markov_constants(hmm)
    errs = parameter_errors(hmm, aligned(est, alignment), np.asarray(obs)[:k])
    return float(prop1_bounds(mc, errs)[k - 1])


def prop2_bound(hmm, est, alignment, obs, k, n):
    """Smoothing bound at step ``k`` of the record ``obs[:n]``."""
    mc = markov_constants(hmm)
    errs = parameter_errors(hmm, aligned(est, alignment), np.asarray(obs)[:n])
    return float(prop2_bounds(mc, errs)[k - 1])


@dataclass
class BoundReport:
    """Both sides of the filtering and smoothing bounds along one record."""

    lhs_filter: np.ndarray
    rhs_filter: np.ndarray
    lhs_smooth: np.ndarray
    rhs_smooth: np.ndarray
    constants: dict
    errors: ParameterErrors
    flags: dict = field(default_factory=dict)

    @property
    def filter_violations(self):
        return int(np.count_nonzero(self.lhs_filter > self.rhs_filter))

    @property
    def smooth_violations(self):
        return int(np.count_nonzero(self.lhs_smooth > self.rhs_smooth))

    @property
    def violations(self):
        return self.filter_violations + self.smooth_violations

    @property
    def clean(self):
        return not any(self.flags.values())

    def summary(self):
        e = self.errors
        return {
            "constants": self.constants,
            "pi_error": e.pi_error,
            "q_error": e.q_error,
            "delta_hat": e.delta_hat,
            "filter_violations": self.filter_violations,
            "smooth_violations": self.smooth_violations,
            "violations": self.violations,
            "max_filter_ratio": float(np.max(self.lhs_filter / self.rhs_filter)),
            "max_smooth_ratio": float(np.max(self.lhs_smooth / self.rhs_smooth)),
            "flags": self.flags,
            "clean": self.clean,
            "tv_convention": "sum |p - q| (range [0, 2])",
        }

    def to_csv(self, path, header_comment=None):
        e = self.errors
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh)
            w.writerow(["time", "lhs_filter", "rhs_filter", "lhs_smooth", "rhs_smooth",
                        "tv_half_smooth", "max_emission_diff", "c_star"])
            for t in range(len(self.lhs_filter)):
                w.writerow([t + 1, *(repr(float(v)) for v in (
                    self.lhs_filter[t], self.rhs_filter[t], self.lhs_smooth[t],
                    self.rhs_smooth[t], 0.5 * self.lhs_smooth[t], e.max_emission_diff[t],
                    e.c_star[t]))])

    def write_sidecar(self, path, **extra):
        d = self.summary()
        d.update(extra)
        with open(path, "w") as fh:
            json.dump(d, fh, indent=2, sort_keys=True)


def audit(hmm, est, obs, alignment=None):
    """Measure plug-in filtering/smoothing TV errors and both bounds on ``obs``.

    The plug-in recursions run on the aligned estimate with clamped
    reconstructed emissions; the same clamped values enter the bounds.
    """
    mc = markov_constants(hmm)
    _require_constants(mc)
    alignment = align_to_model(hmm, est) if alignment is None else alignment
    al = aligned(est, alignment)
    obs = np.asarray(obs, dtype=float)
    raw = al.emissions(obs)
    f_hat = np.maximum(raw, 0.0)
    errs = parameter_errors(hmm, al, obs, f_hat)
    truth = oracle_posteriors(hmm, obs)
    plug = posterior_track(al.q, al.pi, f_hat, obs)
    flags = {
        "degenerate_oracle": bool(truth.degenerate_steps),
        "degenerate_plugin": bool(plug.degenerate_steps),
        "delta_hat_zero": errs.delta_hat <= 0,
        "c_star_floored": bool(errs.c_star_floored.any()),
    }
    constants = {
        "delta_star": mc.delta_star,
        "rho_star": mc.rho_star,
        "c_big_star": mc.c_big_star,
        "delta_hat": errs.delta_hat,
        "rho_hat": forgetting_constants(errs.delta_hat)[0] if errs.delta_hat > 0 else None,
    }
    report = BoundReport(
        tv_distance(truth.filter, plug.filter),
        prop1_bounds(mc, errs),
        tv_distance(truth.smooth, plug.smooth),
        prop2_bounds(mc, errs),
        constants,
        errs,
        flags,
    )
    report.constants["clamped_count"] = int(np.count_nonzero(raw < 0))
    return report


@dataclass
class RateTable:
    """Per-(p, seed) moment and coefficient errors plus per-p summaries."""

    rows: list
    summary: list

    def to_csv(self, path, header_comment=None):
        keys = list(self.rows[0])
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            for row in self.rows:
                w.writerow({k: _cell(v) for k, v in row.items()})

    def median(self, p, key):
        for s in self.summary:
            if s["p"] == p:
                return s[key]["median"]
        raise KeyError(p)


def _cell(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def rate_study(hmm, spec, p_grid, seeds, fit_estimates=True, include_population=False,
               seed_offset=0):
    """Monte Carlo study of moment and estimation errors as ``p`` grows.

    For every ``p`` and seed a fresh trajectory of ``p + 2`` observations is
    simulated, and ``||P_hat - P||_F``, ``||M_hat - M||_F`` (against the
    population moments) and the aligned max-state coefficient error are
    recorded. ``seeds`` is a count; seed ``i`` uses ``seed_offset + i``.
    ``include_population`` adds a ``p = inf`` row computed from the exact
    moments.
    """
    p_grid = list(p_grid)
    if any(b <= a for a, b in zip(p_grid, p_grid[1:])):
        raise ValueError("p_grid must be increasing")
    o_true = coefficient_matrix(hmm, spec)
    pop = population_moments(o_true, hmm.q, hmm.pi)
    rows = []
    for p in p_grid:
        for i in range(seeds):
            s = seed_offset + i
            traj = sample_trajectory(hmm, p + 2, s)
            mom = empirical_moments(traj.obs, spec)
            rows.append(_rate_row(p, s, mom, pop, o_true, hmm.k, fit_estimates))
    if include_population:
        mom = population_moments(o_true, hmm.q, hmm.pi)
        rows.append(_rate_row(np.inf, -1, mom, pop, o_true, hmm.k, fit_estimates))
    keys = ["p_err", "m_err", "n_err", "l_err", "coef_err"]
    summary = []
    for p in sorted({r["p"] for r in rows}):
        sub = [r for r in rows if r["p"] == p]
        entry = {"p": p}
        for key in keys:
            vals = np.array([r[key] for r in sub], dtype=float)
            q1, med, q3 = np.quantile(vals, [0.25, 0.5, 0.75]) if vals.size else (np.nan,) * 3
            entry[key] = {"median": float(med), "q1": float(q1), "q3": float(q3)}
        summary.append(entry)
    return RateTable(rows, summary)


def _rate_row(p, seed, mom, pop, o_true, k, fit_estimates):
    row = {
        "p": p,
        "seed": seed,
        "p_err": float(np.linalg.norm(mom.p - pop.p)),
        "m_err": float(np.linalg.norm(mom.m3 - pop.m3)),
        "n_err": float(np.linalg.norm(mom.n - pop.n)),
        "l_err": float(np.linalg.norm(mom.l - pop.l)),
        "coef_err": np.nan,
    }
    if fit_estimates:
        try:
            est = fit(mom, k, seed=max(seed, 0))
            row["coef_err"] = float(align(o_true, est.o_hat).column_errors.max())
        except EstimationError:
            row["coef_err"] = np.inf
    return row
