"""Local curvature and the co-identifiability map.

Computes the finite-difference Jacobian of the standardized residuals at the
nominal parameters (42 forward solves), forms the Gauss-Newton curvature, and
prints the 4x4 block coupling map. The resistance/reactance pair shares the
dominant cross-information, which is why the sampler updates them in separate
blocks.
"""

import numpy as np

from daebayes import (Posterior, SynthesisConfig, builtin_case_ieee9,
                      curvature_report, default_experiments_ieee9,
                      default_priors, draw_truth, synthesize)

MON = (2, 4, 5, 6, 7, 8, 9)
case = builtin_case_ieee9()
prior = default_priors(case)
truth = draw_truth(case, seed=7)
measurements = synthesize(case, truth, default_experiments_ieee9(),
                          SynthesisConfig(seed=7), MON)
posterior = Posterior(case, prior, measurements, MON)

print("computing the residual Jacobian at eta = 0 (2 x 21 forward solves)...")
report = curvature_report(posterior, np.zeros(prior.n_theta))

names = ["M", "D", "r", "x"]
print("\nco-identifiability map I_XY:")
print("      " + "".join(f"{n:>8}" for n in names))
for i, n in enumerate(names):
    print(f"{n:<6}" + "".join(f"{v:8.3f}" for v in report.I[i]))

i_rx = report.I[2, 3]
cross = max(report.I[0, 2], report.I[0, 3], report.I[1, 2], report.I[1, 3])
print(f"\nI_rx = {i_rx:.3f} dominates the generator-network cross terms "
      f"(max {cross:.3f}, ratio {i_rx / cross:.1f}x):")
print("the r/x pair confounds through the series admittance, while the")
print("generator classes are identified mostly from the frequency channels.")

w = np.linalg.eigvalsh(report.H)
print(f"\ncurvature spectrum: lambda_min = {w[0]:.3e}, lambda_max = {w[-1]:.3e} "
      f"(condition {w[-1] / max(w[0], 1e-300):.1e})")
