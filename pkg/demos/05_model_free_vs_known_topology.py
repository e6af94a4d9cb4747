"""Model-free retrieval against a solver that knows the admittance matrix.

With exact sensitivities the two coincide. Noise in the sensitivity
matrices (sigma_jac) costs the model-free method accuracy gradually.
"""

from gridphase.netmodel import load_case
from gridphase.powerflow import nr_solve
from gridphase.simkit import run_noise_sweep, summarize_sweep

net = load_case("RTS_GMLC")
sol = nr_solve(net)
rows = run_noise_sweep(net, sol, [0.01, 0.05, 0.1], [0.0, 0.05, 0.1], n_boot=20, master_seed=0)

print(f"{'method':<15}{'sigma_meas':>11}{'sigma_jac':>10}{'mean rel. err':>15}{'std':>10}")
for g in summarize_sweep(rows):
    sj = "-" if g["sigma_jac"] is None else g["sigma_jac"]
    print(f"{g['method']:<15}{g['sigma_meas']:>11}{sj:>10}"
          f"{g['mean_relative_error']:>15.4f}{g['std_relative_error']:>10.4f}")
