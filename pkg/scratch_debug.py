"""Debug the restart/shift comparison."""
import numpy as np

from ionnet import dynamics, hilbert, purebranch


def compare(name, s_us, mono=False):
    doc = dict(hilbert.load_preset(name))
    if mono:
        doc["Omega2"] = 0.0
    p = hilbert.node_params_from_dict(doc)
    grid = dynamics.TimeGrid.for_node(p)
    ptraj = purebranch.propagate_no_noise(p, grid)
    table = purebranch.build_amplitudes(ptraj, p)
    s_step = round(s_us * 1e-6 / grid.dt)
    exact = purebranch.propagate_no_noise_restart(p, grid, s_step)
    t = grid.times()
    _, eps_v, eps_h = hilbert.frame_energies(p, 0.0)
    a_ex = np.exp(1j * eps_v * t) * exact[:, 2]
    b_ex = np.exp(1j * eps_h * t) * exact[:, 3]
    a_sh = table.shifted("v", s_step)
    b_sh = table.shifted("h", s_step)
    for lab, ex, sh in (("alpha", a_ex, a_sh), ("beta", b_ex, b_sh)):
        n_ex, n_sh = np.linalg.norm(ex), np.linalg.norm(sh)
        ov = np.vdot(ex, sh)
        raw = np.linalg.norm(ex - sh) / n_ex
        # residual after optimal global phase alignment
        aligned = np.linalg.norm(ex - np.exp(1j * np.angle(ov)) * sh) / n_ex
        mag = np.linalg.norm(np.abs(ex) - np.abs(sh)) / n_ex
        print(f"{name} mono={mono} s={s_us}us {lab}: |ex|={n_ex:.4f} |sh|={n_sh:.4f} "
              f"raw={raw:.4f} aligned={aligned:.4f} mag-only={mag:.4f} "
              f"phase(ov)={np.angle(ov):+.3f}")


compare("nodeB", 5.0)
compare("nodeB", 15.0)
compare("nodeB", 5.0, mono=True)

# rank-1 sanity: no scattering channels -> ketbra(psi) == restricted rho
doc = dict(hilbert.load_preset("nodeB"))
doc["gamma_sp"] = 0.0
doc["gamma_ss"] = 0.0
p = hilbert.node_params_from_dict(doc)
grid = dynamics.TimeGrid.for_node(p, t_end=20e-6)
traj = dynamics.evolve_restricted(p, grid)
ptraj = purebranch.propagate_no_noise(p, grid)
rho_pure = np.einsum("ki,kj->kij", ptraj.psi, ptraj.psi.conj())
err = np.abs(rho_pure - traj.states).max()
print(f"no-recycling ketbra vs restricted: max entry err {err:.2e}")
