"""Tour of the spectral layer: eigenpairs, heat decay, smoothing, Weyl counts.

Run:  python3 demos/01_spectrum_and_heat_semigroup.py
"""

import numpy as np

from spdecontrol import (eigenpairs, make_domain, semigroup_apply,
                         ultracontractivity_witness, weyl_count)

dom = make_domain(dimension=2, n_modes_per_axis=16)
print(f"domain: [0,pi]^2 with {dom.n_modes} modes, smoothing exponent lambda = "
      f"{dom.lambda_exponent}")

print("\nlowest eigenpairs (multi-index, eigenvalue):")
for k, mu, _ in eigenpairs(dom, 6):
    print(f"  k={k}  mu={mu:.0f}")

rng = np.random.default_rng(0)
x = rng.standard_normal(dom.n_modes)
print("\nheat decay of a random field (L2 norm):")
for t in (0.0, 0.05, 0.2, 1.0):
    print(f"  t={t:4.2f}  |S(t)x| = {np.linalg.norm(semigroup_apply(dom, t, x)):.4f}")

print("\nsmoothing ratio |S(t)x|_sup / |x|_L2 over a dyadic sweep")
print("(bounded by C t^(-1/2) in two dimensions):")
for k in range(1, 8):
    t = 2.0 ** (-k)
    r = ultracontractivity_witness(dom, t, x)
    print(f"  t=2^-{k}  ratio={r:8.4f}  ratio*t^0.5={r * t**0.5:.4f}")

big = make_domain(2, 32)
print("\neigenvalue counts vs the area asymptotics pi*mu/4:")
for mu in (100, 200, 400):
    n = weyl_count(big, mu)
    print(f"  N({mu}) = {n:4d}   N/(pi mu/4) = {4 * n / (np.pi * mu):.3f}")
