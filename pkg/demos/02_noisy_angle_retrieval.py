"""Recovering PQ-bus angles from noisy magnitude-only perturbations.

For each noise level, twenty seeded snapshots are simulated on RTS-GMLC and
the angles are recovered by least squares. The median error grows with the
noise but stays small.
"""

import numpy as np

from gridphase.netmodel import load_case
from gridphase.powerflow import nr_solve
from gridphase.simkit import NoiseSpec, run_retrieval_experiment

net = load_case("RTS_GMLC")
sol = nr_solve(net)
seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(7).spawn(20)]

print("sigma_meas  median |err| (rad)  max |err| (rad)")
for sigma in (0.0, 0.01, 0.05, 0.1):
    errs = np.concatenate([run_retrieval_experiment(net, sol, NoiseSpec(sigma, 0.0, s)).abs_error
                           for s in seeds])
    print(f"{sigma:>10}  {np.median(errs):>18.2e}  {errs.max():>15.2e}")

est = run_retrieval_experiment(net, sol, NoiseSpec(0.01, 0.0, 1), sensitivities="estimated")
print(f"\nwith regression-estimated sensitivities (window 2n): max error {est.abs_error.max():.2e} rad")
