"""Seeded Monte Carlo harnesses built on the estimation and evaluation modules.

Every run draws its trajectory from ``seed`` alone, so a study is fully
reproducible from its arguments and results do not depend on run order.
"""

from dataclasses import dataclass

import numpy as np

from .errors import EstimationError
from .evaluation import align, align_to_model, aligned, audit, emission_l2_risk, projection_bias
from .inference import oracle_posteriors, posterior_track, tv_distance
from .model import HmmSpec, coefficient_matrix, population_moments_for, sample_trajectory
from .numerics import stationary_of
from .spectral import estimate, fit


def random_hmm(k, rng, min_entry=0.05, min_sigma=0.05, spec=None, max_tries=1000):
    """Random K-state model with single-beta emissions.

    Transition rows are Dirichlet(1) draws mixed with the uniform row so that
    every entry is at least ``min_entry``. Beta parameters are uniform on
    ``[1.5, 8]``. Draws whose transition matrix, or emission coefficient
    matrix in ``spec``, has smallest singular value below ``min_sigma`` are
    rejected, so the moments are well conditioned.
    """
    rng = np.random.default_rng(rng)
    for _ in range(max_tries):
        raw = rng.dirichlet(np.ones(k), size=k)
        q = min_entry + (1.0 - k * min_entry) * raw
        emissions = tuple(((1.0, a, b),) for a, b in rng.uniform(1.5, 8.0, size=(k, 2)))
        if np.linalg.svd(q, compute_uv=False)[-1] < min_sigma:
            continue
        hmm = HmmSpec(q, stationary_of(q), emissions)
        if spec is not None:
            o = coefficient_matrix(hmm, spec)
            if np.linalg.svd(o, compute_uv=False)[-1] < min_sigma:
                continue
        return hmm
    raise RuntimeError(f"no well-conditioned model after {max_tries} draws")


@dataclass(frozen=True)
class Recovery:
    """Max entrywise errors of an aligned fit against the truth."""

    o_error: float
    q_error: float
    pi_error: float

    @property
    def max_error(self):
        return max(self.o_error, self.q_error, self.pi_error)


def population_recovery(hmm, spec, seed=0):
    """Fit the exact moments of ``hmm`` and compare with its parameters."""
    moments = population_moments_for(hmm, spec)
    est = fit(moments, hmm.k, seed=seed)
    o_true = coefficient_matrix(hmm, spec)
    al = aligned(est, align(o_true, est.o_hat))
    return Recovery(
        float(np.abs(al.o - o_true).max()),
        float(np.abs(al.q - hmm.q).max()),
        float(np.abs(al.pi - hmm.pi).max()),
    )


def audit_runs(hmm, spec, p, n, seeds):
    """One bound audit per seed: estimation on ``p + 2`` observations, inference on the next ``n``."""
    reports = []
    for seed in seeds:
        traj = sample_trajectory(hmm, p + 2 + n, seed)
        est = estimate(traj.obs[: p + 2], spec, hmm.k, seed=seed)
        reports.append(audit(hmm, est, traj.obs[p + 2 :]))
    return reports


def summarize_audits(reports):
    clean = [r for r in reports if r.clean]
    return {
        "runs": len(reports),
        "clean_runs": len(clean),
        "violations": int(sum(r.violations for r in reports)),
        "clean_violations": int(sum(r.violations for r in clean)),
        "max_filter_ratio": max(float(np.max(r.lhs_filter / r.rhs_filter)) for r in reports),
        "max_smooth_ratio": max(float(np.max(r.lhs_smooth / r.rhs_smooth)) for r in reports),
    }


def risk_study(hmm, spec, sizes, seeds):
    """Total L2 emission risk per (size, seed, state).

    Returns ``(risks, bias)`` where ``risks[size]`` is a ``(len(seeds), K)``
    array (``inf`` for failed fits) and ``bias`` is the projection bias.
    """
    risks = {}
    for n in sizes:
        rows = []
        for seed in seeds:
            obs = sample_trajectory(hmm, n, seed).obs
            try:
                est = estimate(obs, spec, hmm.k, seed=seed)
            except EstimationError:
                rows.append(np.full(hmm.k, np.inf))
                continue
            rows.append(emission_l2_risk(hmm, est, align_to_model(hmm, est)).total)
        risks[n] = np.array(rows)
    return risks, projection_bias(hmm, spec)


def posterior_gap_study(hmm, spec, p_grid, n, seeds):
    """Per-seed median smoothing TV gap between plug-in and oracle tracks.

    For each estimation size ``p`` and seed, the first ``p + 2``
    observations feed the estimator and the following ``n`` are smoothed
    with both the aligned plug-in parameters and the truth. Returns a
    mapping ``p -> array`` of per-seed medians over the ``n`` steps.
    """
    out = {}
    for p in p_grid:
        medians = []
        for seed in seeds:
            traj = sample_trajectory(hmm, p + 2 + n, seed)
            obs = traj.obs[p + 2 :]
            try:
                est = estimate(traj.obs[: p + 2], spec, hmm.k, seed=seed)
            except EstimationError:
                medians.append(np.inf)
                continue
            al = aligned(est, align_to_model(hmm, est))
            plug = posterior_track(al.q, al.pi, np.maximum(al.emissions(obs), 0.0), obs)
            truth = oracle_posteriors(hmm, obs)
            medians.append(float(np.median(tv_distance(truth.smooth, plug.smooth))))
        out[p] = np.array(medians)
    return out
