"""When is the colored stochastic convolution a continuous field?

The coloring b_k = mu_k^(-gamma) must beat a dimension-dependent threshold
that also depends on how fast the eigenfunctions can grow (square vs ball).
Below it, sup-norm statistics keep growing as modes are added.

Run:  python3 demos/02_noise_regularity.py
"""

from spdecontrol import NoiseModel, make_domain, regularity_threshold, supnorm_moment_study
from spdecontrol.noise import series_condition_v, trace_summand
from spdecontrol.spectral import DomainKind

ALPHA = 0.25
print(f"thresholds gamma_min at alpha = {ALPHA} (need gamma > gamma_min strictly):")
print("  d | square/interval |  ball (worst case)")
for d in (1, 2, 3):
    hyp = regularity_threshold(d, DomainKind.HYPERCUBE, ALPHA)
    ball = regularity_threshold(d, DomainKind.BALL_FORMULA, ALPHA)
    print(f"  {d} | {hyp:15.2f} | {ball:8.2f}")

print("\nseries verdicts for gamma = 0.4, alpha = 0.25:")
for d in (1, 2, 3):
    for kind in DomainKind:
        dom = make_domain(d, 4, kind)
        v = series_condition_v(dom, NoiseModel(dom, 0.4, ALPHA, 1))
        print(f"  d={d} {kind.value:22s} converges={v['converges']} "
          f"(summand exponent {v['exponent']:+.2f})")

dom = make_domain(2, 32)
noise = NoiseModel(dom, 0.4, ALPHA, seed=7)
print(f"\ncovariance trace at t=1 with 32^2 modes: "
      f"{trace_summand(dom, noise, 1.0):.4f}")

print("\nempirical E sup|W_A|^2 vs mode truncation (d=2):")
for gamma, label in ((0.0, "white in space, below threshold"),
                     (0.6, "colored, above threshold")):
    noise = NoiseModel(dom, gamma, ALPHA, seed=7)
    rows = supnorm_moment_study(dom, noise, [8, 16, 32], n_paths=100, n_steps=16)
    vals = ", ".join(f"{r['modes_per_axis']}^2: {r['estimate']:.3f}" for r in rows)
    print(f"  gamma={gamma} ({label})\n    {vals}")
