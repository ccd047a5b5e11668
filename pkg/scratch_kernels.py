"""Validate kernel-diagonal identity and the start-time-shift approximation."""
import time

import numpy as np

from ionnet import dynamics, hilbert, purebranch


def check_node(name, delta_omega=0.0):
    p = hilbert.node_from_preset(name)
    grid = dynamics.TimeGrid.for_node(p)
    traj = dynamics.evolve_restricted(p, grid, delta_omega)
    pv, ph = dynamics.photon_envelopes(traj, p)
    ps = dynamics.scattering_rate(traj, p)

    t0 = time.time()
    ptraj = purebranch.propagate_no_noise(p, grid, delta_omega)
    table = purebranch.build_amplitudes(ptraj, p)
    idx = purebranch.coarse_indices(grid)
    gv, gh = purebranch.coherence_kernels(table, ps, idx, p.kappa)
    dt_k = time.time() - t0

    for kern, env, pol in ((gv, pv, "v"), (gh, ph, "h")):
        kd = kern.envelope()
        ref = env[idx]
        err = np.abs(kd - ref).max() / ref.max()
        print(f"{name} {pol} dw={delta_omega:.1e}: max|2kG(t,t)-p|/max p = {err:.2e} "
              f"(kernel {dt_k:.1f}s, purity {kern.purity_ratio():.3f})")

    # shift approximation: restarts at 5, 15, 30 us, L2 error of amplitudes
    for s_us in (5.0, 15.0, 30.0):
        s_step = round(s_us * 1e-6 / grid.dt)
        exact = purebranch.propagate_no_noise_restart(p, grid, s_step, delta_omega)
        t = grid.times()
        _, eps_v, eps_h = hilbert.frame_energies(p, delta_omega)
        a_exact = np.exp(1j * eps_v * t) * exact[:, 2]
        b_exact = np.exp(1j * eps_h * t) * exact[:, 3]
        a_shift = table.shifted("v", s_step)
        b_shift = table.shifted("h", s_step)
        rel_a = np.linalg.norm(a_exact - a_shift) / np.linalg.norm(a_exact)
        rel_b = np.linalg.norm(b_exact - b_shift) / np.linalg.norm(b_exact)
        print(f"  restart {s_us:>4.0f} us: L2 rel err alpha {rel_a:.4f} beta {rel_b:.4f}")


check_node("nodeB")
check_node("nodeA")
check_node("nodeA", delta_omega=hilbert.mhz(0.1))
