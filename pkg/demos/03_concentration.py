"""Moment concentration: the Frobenius error of P_hat against p.

Quadrupling the number of triples should roughly halve the error. The
triple-moment error also grows with the basis size at a fixed p.
"""

import numpy as np

from nphmm import BasisSpec, section4_hmm
from nphmm.evaluation import rate_study

hmm = section4_hmm()
grid = [4000, 16000, 64000]
table = rate_study(hmm, BasisSpec("hist", 8), grid, seeds=20, include_population=True)

print(f"{'p':>8} {'||P_hat-P||':>12} {'||M_hat-M||':>12} {'coef err':>10}")
for s in table.summary:
    print(f"{s['p']:>8} {s['p_err']['median']:>12.5f} {s['m_err']['median']:>12.5f} "
          f"{s['coef_err']['median']:>10.5f}")

med = [table.median(p, "p_err") for p in grid]
print("ratios per 4x increase:", np.round(np.divide(med[1:], med[:-1]), 3), "(theory 0.5)")

print("\nbasis size vs triple-moment error at p = 16000")
for m in (4, 8, 16, 32):
    t = rate_study(hmm, BasisSpec("hist", m), [16000], seeds=10, fit_estimates=False)
    print(f"  M={m:>2}: median ||M_hat - M||_F = {t.median(16000, 'm_err'):.4f}")
