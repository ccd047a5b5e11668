"""Scratch physics validation (not part of the package)."""
import time

import numpy as np

from ionnet import dynamics, hilbert
from ionnet.hilbert import mhz


def rabi_check():
    # two-level: only Omega1 + detuning, no decay, no cavity
    omega = mhz(3.0)
    delta = mhz(5.0)
    p = hilbert.NodeParams(
        omega1=omega, omega2=0.0, g1=0.0, g2=0.0,
        delta1=delta, delta2=delta, deltac1=delta, deltac2=delta,
        kappa=0.0, gamma_sp=0.0, gamma_dp=0.0, gamma_dprime_p=0.0,
        gamma_ss=0.0, gamma_clj=0.0, eta=0.5, pulse_duration=100e-6,
        detuning_convention="unprimed")
    grid = dynamics.TimeGrid(0.0, 0.5e-9, 20000)  # 10 us
    t0 = time.time()
    traj = dynamics.evolve_restricted(p, grid)
    t = grid.times()
    w = np.sqrt(omega**2 + delta**2)
    expected = (omega**2 / w**2) * np.sin(w * t / 2.0) ** 2
    err = np.abs(traj.population(1) - expected).max()
    print(f"rabi: max err = {err:.3e}  ({time.time()-t0:.2f}s)")


def node_curves(name, target_dt=1e-9):
    p = hilbert.node_from_preset(name)
    grid = dynamics.TimeGrid.for_node(p, target_dt=target_dt)
    t0 = time.time()
    traj = dynamics.evolve_restricted(p, grid)
    dt_run = time.time() - t0
    pv, ph = dynamics.photon_envelopes(traj, p)
    ps = dynamics.scattering_rate(traj, p)
    dt = grid.dt
    n_scatter = np.sum(ps[:-1]) * dt
    p_emit = np.sum(pv[:-1] + ph[:-1]) * dt
    tr_end = traj.trace()[-1]
    tpk = grid.times()[np.argmax(pv + ph)] * 1e6
    # window fraction [5.5, 23] us
    t = grid.times()
    m = (t >= 5.5e-6) & (t <= 23e-6)
    frac_v = np.sum(pv[m]) / np.sum(pv)
    frac_h = np.sum(ph[m]) / np.sum(ph)
    print(f"{name}: dt={dt*1e9:.4f}ns steps={grid.n_steps} run={dt_run:.2f}s")
    print(f"  scatter events = {n_scatter:.3f}   P_emit = {p_emit:.4f} "
          f"(eta*P = {p.eta*p_emit:.4f})  trace_end = {tr_end:.4f}")
    print(f"  peak at {tpk:.2f} us; window frac v/h = {frac_v:.3f}/{frac_h:.3f}")
    return n_scatter, p_emit


def convergence(name):
    p = hilbert.node_from_preset(name)
    vals = []
    for target in (2e-9, 1e-9, 0.5e-9):
        grid = dynamics.TimeGrid.for_node(p, target_dt=target)
        traj = dynamics.evolve_restricted(p, grid)
        pv, ph = dynamics.photon_envelopes(traj, p)
        vals.append(np.sum(pv[:-1] + ph[:-1]) * grid.dt)
    print(f"{name} convergence: {vals}")
    print(f"  rel change 2->1ns: {abs(vals[1]-vals[0])/vals[1]:.2e}, "
          f"1->0.5ns: {abs(vals[2]-vals[1])/vals[2]:.2e}")


if __name__ == "__main__":
    rabi_check()
    node_curves("nodeB")
    node_curves("nodeA")
    convergence("nodeB")
    convergence("nodeA")
