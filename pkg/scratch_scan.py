"""Scan cavity-detuning rule and coupling weight against reference numbers."""
import numpy as np

from ionnet import dynamics, hilbert
from ionnet.hilbert import mhz


def run(name, c_stark, weight, target_dt=1e-9, report=False):
    doc = dict(hilbert.load_preset(name))
    doc["g_weight_v"] = weight
    doc["g_weight_h"] = weight
    p0 = hilbert.node_params_from_dict(doc)
    shift = abs(hilbert.stark_shift(p0))
    d1, d2 = hilbert.calibrated_detunings(p0)
    p = hilbert.NodeParams(
        **{**p0.__dict__,
           "deltac1": d1 + c_stark * shift,
           "deltac2": d2 + c_stark * shift})
    grid = dynamics.TimeGrid.for_node(p, target_dt=target_dt)
    traj = dynamics.evolve_restricted(p, grid)
    pv, ph = dynamics.photon_envelopes(traj, p)
    ps = dynamics.scattering_rate(traj, p)
    n_sc = np.sum(ps[:-1]) * grid.dt
    p_emit = np.sum(pv[:-1] + ph[:-1]) * grid.dt
    if report:
        t = grid.times()
        m = (t >= 5.5e-6) & (t <= 23e-6)
        tpk = t[np.argmax(pv + ph)] * 1e6
        print(f"    peak {tpk:.2f} us, window frac {np.sum((pv+ph)[m])/np.sum(pv+ph):.3f},"
              f" P_V {np.sum(pv[:-1])*grid.dt:.4f} P_H {np.sum(ph[:-1])*grid.dt:.4f},"
              f" trace_end {traj.trace()[-1]:.4f}")
    return n_sc, p_emit


print("== deltac scan, node B, weight 1.0 ==")
for c in (0.0, 1.0, 1.5, 2.0, 2.5, 3.0):
    n_sc, pe = run("nodeB", c, 1.0)
    print(f"  deltac = delta' + {c:.1f}|ds|: scatters {n_sc:.3f}  P_emit {pe:.4f}")

print("== weight scan at resonance rule (c=2), node B (target 2.1) ==")
for w in (1.0, 0.7, 0.6, 0.5, 0.45, 0.4):
    n_sc, pe = run("nodeB", 2.0, w)
    print(f"  w={w:.2f}: scatters {n_sc:.3f}  P_emit {pe:.4f}")

print("== weight scan at resonance rule (c=2), node A (target 5.3) ==")
for w in (1.0, 0.7, 0.6, 0.5, 0.45, 0.4):
    n_sc, pe = run("nodeA", 2.0, w)
    print(f"  w={w:.2f}: scatters {n_sc:.3f}  P_emit {pe:.4f}")
