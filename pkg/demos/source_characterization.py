"""Fitting the source parameters back out of simulated data.

Lifetime from the rectilinear sum, fine-structure splitting from the
circular combination RL + LR - RR - LL, and the efficiency bookkeeping.

    python3 demos/source_characterization.py
"""

import numpy as np

from qdcascade import fitting
from qdcascade import simulation as sim

h = sim.sample_histograms(
    sim.expected_histograms(
        sim.SourceModel(p_m=0.00415), sim.DetectorModel("gaussian", 30.0, 1.0, 1.0),
        sim.TimeGrid(10.0, 800, -2000.0), 300.0,
    ),
    seed=7,
)
tau = h.tau_ps

life = fitting.fit_lifetime(tau, h.combination(["HH", "VV", "HV", "VH"]), 30.0)
print(f"tau_X = {life.params['tau_x_ns']:.4f} +- {life.errors['tau_x_ns']:.4f} ns")

plus, minus = h.combination(["RL", "LR"]), h.combination(["RR", "LL"])
fss = fitting.fit_fss(tau, plus - minus, 30.0, sigma=np.sqrt(np.maximum(plus + minus, 1.0)))
print(f"S = {fss.params['S_ueV']:.4f} +- {fss.errors['S_ueV']:.4f} ueV "
      f"({fss.params['f_mhz']:.1f} MHz)")

print(f"combined jitter of 19, 18, 10, 10 ps: {fitting.combine_jitter(19, 18, 10, 10):.2f} ps")
b = fitting.efficiency_budget(0.774, 0.82, 0.167, 942.89e3, 401.29e3, 0.063, 76.2e6)
print(f"eta_NW = {b.eta_nw:.4f}, eta_int = {b.eta_int:.4f}, eta_est = {100 * b.eta_est:.3f} %")
