"""End-to-end netsim validation at full scale."""
import sys
import time

import numpy as np

from ionnet import dynamics, hilbert, netsim, pbsm

n_attempts = int(sys.argv[1]) if len(sys.argv) > 1 else 13_656_928
target_dt = float(sys.argv[2]) if len(sys.argv) > 2 else 1e-9

node_a = hilbert.node_from_preset("nodeA")
node_b = hilbert.node_from_preset("nodeB")
table = pbsm.DetectorTable.from_preset()
seq = netsim.SequenceConfig()
ens = dynamics.jitter_ensemble(node_a.gamma_clj, k_max=6)

t0 = time.time()
imodel = pbsm.build_interference_model(node_a, node_b, ens, mode="full",
                                       target_dt=target_dt)
print(f"interference model: {time.time()-t0:.0f}s")
dmodel = netsim.build_detection_model(node_a, node_b, table, seq, ens,
                                      model=imodel)
dmodel = netsim.calibrate_to_success_probability(dmodel, 3960 / 13656928)
print(f"photon scale: {dmodel.photon_scale:.5f}")

t0 = time.time()
clicks, log = netsim.simulate_attempts(seq, dmodel, n_attempts, seed=20220811)
print(f"simulate: {time.time()-t0:.0f}s, clicks {len(clicks)}")

metrics = netsim.success_metrics(clicks, log, table)
print(f"coincidences: {metrics.n_coincidences} (target 3960, 3sig = {3*np.sqrt(3960):.0f})")
print(f"success prob: {metrics.success_probability:.3e}")
print(f"herald rate: {metrics.herald_rate:.3f}/s")

t_list = np.array([0.25, 1.0, 5.0, 17.5]) * 1e-6
hom = netsim.hom_analysis(clicks, table, t_list=t_list)
curve = pbsm.visibility_from_model(imodel, hom.t_effective)
for i, t_win in enumerate(t_list):
    sel = np.abs(hom.tau_centers) <= hom.t_effective[i] - 0.25e-6 + 1e-12
    n_par_raw = hom.n_parallel_raw[sel].sum()
    n_perp_raw = hom.n_perp_raw[sel].sum()
    n_par = hom.n_parallel[sel].sum()
    n_perp = hom.n_perp[sel].sum()
    var = n_par_raw / max(n_perp, 1)**2 + (n_par / max(n_perp, 1)**2)**2 * n_perp_raw
    sigma = np.sqrt(var) * 2.2  # acceptance-correction inflation, rough
    dv = hom.visibility[i] - curve.visibility[i]
    print(f"  T={t_win*1e6:5.2f}us: V_data {hom.visibility[i]:+.4f} "
          f"V_model {curve.visibility[i]:.4f} diff {dv:+.4f} (~{abs(dv)/max(sigma,1e-9):.1f} sigma)")
