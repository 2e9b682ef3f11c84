"""Two-state walkthrough: simulate, estimate with two bases, smooth.

Run with ``python demos/01_two_state_walkthrough.py``. Everything prints to
the terminal; pass a directory as the first argument to also write
plot-ready CSV files there.
"""

import sys
from pathlib import Path

import numpy as np

from nphmm import BasisSpec, estimate, markov_constants, sample_trajectory, section4_hmm
from nphmm.evaluation import align_to_model, aligned, emission_l2_risk
from nphmm.inference import oracle_posteriors, posterior_track, tv_distance

np.set_printoptions(precision=4, suppress=True)
out = Path(sys.argv[1]) if len(sys.argv) > 1 else None

# The generating model: a sticky-ish two-state chain emitting beta(2,5) or beta(4,3).
hmm = section4_hmm()
print("Q* =\n", hmm.q)
print("pi* =", hmm.pi)

mc = markov_constants(hmm)
print(f"delta*={mc.delta_star}, rho*={mc.rho_star}, C*={mc.c_big_star}, G_ps={mc.g_ps:.4f}")

# One long trajectory; hidden states are kept only to score the results.
traj = sample_trajectory(hmm, 60_000, seed=0)
print("first observations:", traj.obs[:5])
print("state occupancy:", np.bincount(traj.hidden) / len(traj))

# Fit with a histogram basis and a trigonometric basis.
for spec in (BasisSpec("hist", 11), BasisSpec("trig", 13)):
    est = estimate(traj.obs, spec, k=2, seed=0)
    alignment = align_to_model(hmm, est)
    al = aligned(est, alignment)
    risk = emission_l2_risk(hmm, est, alignment)
    print(f"\n{spec.family} M={spec.size}")
    print("  Q_hat =\n", al.q)
    print("  pi_hat =", al.pi)
    print("  L2 risk per state:", risk.total, " projection bias:", risk.bias)
    print("  sigma_K(P_hat) =", f"{est.diagnostics.sigma_k_p:.4f}",
          " theta redraws:", est.diagnostics.redraws)

    # Smooth the last 500 observations with plug-in and true parameters.
    obs = traj.obs[-500:]
    plug = posterior_track(al.q, al.pi, np.maximum(al.emissions(obs), 0.0), obs)
    truth = oracle_posteriors(hmm, obs)
    gap = tv_distance(truth.smooth, plug.smooth)
    print(f"  smoothing TV gap: median {np.median(gap):.4f}, max {gap.max():.4f}")
    hits = np.mean(plug.smooth.argmax(axis=1) == traj.hidden[-500:])
    print(f"  plug-in MAP state agrees with the hidden state {hits:.1%} of the time")

    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        grid = np.linspace(0, 1, 201)
        table = np.column_stack([grid, al.emissions(grid)])
        np.savetxt(out / f"emissions_{spec.family}.csv", table, delimiter=",",
                   header="y,f_hat_0,f_hat_1", comments="")
        plug.to_csv(out / f"smoothing_{spec.family}.csv",
                    extra_columns={"oracle_smooth": truth.smooth})
