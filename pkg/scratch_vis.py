"""First look at the model visibility deconstruction."""
import sys
import time

import numpy as np

from ionnet import dynamics, hilbert, pbsm

target_dt = float(sys.argv[1]) if len(sys.argv) > 1 else 1e-9
gamma_clj = float(sys.argv[2]) if len(sys.argv) > 2 else 0.06

node_a = hilbert.node_from_preset("nodeA", gamma_clj=gamma_clj)
node_b = hilbert.node_from_preset("nodeB")
ens = dynamics.jitter_ensemble(node_a.gamma_clj, k_max=6)
t_list = np.array([0.25, 0.5, 1.0, 2.0, 5.0, 10.0, 17.5]) * 1e-6

for mode in ("pure", "no_technical", "full"):
    t0 = time.time()
    curve = pbsm.model_visibility(node_a, node_b, t_list, mode=mode,
                                  ensemble_a=ens, target_dt=target_dt)
    el = time.time() - t0
    vals = " ".join(f"{v:.4f}" for v in curve.visibility)
    print(f"{mode:>13} ({el:5.1f}s): V = {vals}")
print("T_us:", " ".join(f"{t*1e6:6.2f}" for t in t_list))
