"""Acceptance suite: every exit criterion at its stated tolerance.

Each test prints one PASS/FAIL line (bypassing capture) so a full run reads
as a checklist.  Heavy pipelines are shared through module-scoped fixtures;
their build times are charged to the criteria that rely on them.
"""

import sys
import time

import numpy as np
import pytest

from ionnet import dynamics, empirical, hilbert, netsim, pbsm, purebranch
from ionnet import tomography as tomo
from ionnet.dynamics import TimeGrid
from ionnet.hilbert import mhz

SWEEP = np.arange(0.25e-6, 17.5e-6 + 1e-9, 0.25e-6)
KEY_WINDOWS = np.array([0.25, 1.0, 5.0, 17.5]) * 1e-6
N_ATTEMPTS = 13_656_928
TARGET_COINCIDENCES = 3960
MASTER_SEED = 20220811

_timings = {}


def _report(number, name, ok, detail):
    line = (f"[{number:>2}/10] {'PASS' if ok else 'FAIL'} {name}: {detail}")
    print(line, file=sys.__stdout__, flush=True)
    assert ok, line


@pytest.fixture(scope="module")
def node_a():
    return hilbert.node_from_preset("nodeA")


@pytest.fixture(scope="module")
def node_b():
    return hilbert.node_from_preset("nodeB")


@pytest.fixture(scope="module")
def table():
    return pbsm.DetectorTable.from_preset()


def _timed_model(key, builder):
    start = time.monotonic()
    model = builder()
    _timings[key] = time.monotonic() - start
    return model


@pytest.fixture(scope="module")
def full_model(node_a, node_b):
    ens = dynamics.jitter_ensemble(node_a.gamma_clj, k_max=6)
    return _timed_model("full_006", lambda: pbsm.build_interference_model(
        node_a, node_b, ens, mode="full"))


@pytest.fixture(scope="module")
def full_model_high_jitter(node_b):
    node_a_hj = hilbert.node_from_preset("nodeA", gamma_clj=0.1)
    ens = dynamics.jitter_ensemble(node_a_hj.gamma_clj, k_max=6)
    return _timed_model("full_010", lambda: pbsm.build_interference_model(
        node_a_hj, node_b, ens, mode="full"))


@pytest.fixture(scope="module")
def no_technical_model(node_a, node_b):
    return _timed_model("no_technical", lambda: pbsm.build_interference_model(
        node_a, node_b, mode="no_technical"))


@pytest.fixture(scope="module")
def pure_model(node_a, node_b):
    return _timed_model("pure", lambda: pbsm.build_interference_model(
        node_a, node_b, mode="pure"))


def test_criterion_01_two_level_rabi_oracle():
    start = time.monotonic()
    omega, delta = mhz(3.0), mhz(5.0)
    params = hilbert.NodeParams(
        omega1=omega, omega2=0.0, g1=0.0, g2=0.0, delta1=delta, delta2=delta,
        deltac1=delta, deltac2=delta, kappa=0.0, gamma_sp=0.0, gamma_dp=0.0,
        gamma_dprime_p=0.0, gamma_ss=0.0, gamma_clj=0.0, eta=0.5,
        pulse_duration=100e-6, detuning_convention="unprimed")
    grid = TimeGrid(0.0, 0.5e-9, 20_000)
    traj = dynamics.evolve_restricted(params, grid)
    t = grid.times()
    rabi = np.sqrt(omega ** 2 + delta ** 2)
    expected = (omega ** 2 / rabi ** 2) * np.sin(rabi * t / 2.0) ** 2
    err = float(np.abs(traj.population(1) - expected).max())
    elapsed = time.monotonic() - start
    _report(1, "two-level Rabi oracle",
            err < 1e-6 and elapsed < 1.0,
            f"max error {err:.2e} (tol 1e-6), {elapsed:.2f}s (limit 1s)")


def _jump_survival_mc(params, grid, n_traj, seed):
    """Event-counting jump unraveling; survival of the photon manifold."""
    props = dynamics.step_propagators(params, grid, 0.0, "nonhermitian")
    rng = np.random.default_rng(seed)
    psis = np.zeros((4, n_traj), dtype=np.complex128)
    psis[0] = 1.0
    thresholds = rng.random(n_traj)
    alive = np.ones(n_traj, dtype=bool)
    survival = np.empty(grid.n_steps + 1)
    survival[0] = 1.0
    recycle = np.array([2.0 * params.gamma_ss, 2.0 * params.gamma_sp])
    exit_rates = np.array([2.0 * (params.gamma_dp + params.gamma_dprime_p),
                           2.0 * params.kappa, 2.0 * params.kappa])
    for n in range(grid.n_steps):
        mat = props.matrix(n)
        psis[:, alive] = mat @ psis[:, alive]
        norms = np.einsum("ik,ik->k", psis.conj(), psis).real
        jumped = alive & (norms < thresholds)
        idx = np.flatnonzero(jumped)
        if idx.size:
            amp2 = np.abs(psis[:, idx]) ** 2
            # channel weights: ss and sp recycle; dp+d'p, photon-v, photon-h exit
            weights = np.vstack([
                recycle[0] * amp2[0], recycle[1] * amp2[1],
                exit_rates[0] * amp2[1], exit_rates[1] * amp2[2],
                exit_rates[2] * amp2[3]])
            weights /= weights.sum(axis=0, keepdims=True)
            draws = rng.random(idx.size)
            channel = (draws[None, :] > np.cumsum(weights, axis=0)).sum(axis=0)
            recycled = idx[channel < 2]
            exited = idx[channel >= 2]
            psis[:, recycled] = 0.0
            psis[0, recycled] = 1.0
            thresholds[recycled] = rng.random(recycled.size)
            alive[exited] = False
            psis[:, exited] = 0.0
        survival[n + 1] = alive.mean()
    return survival


def test_criterion_02_trace_and_branch_consistency(node_b):
    start = time.monotonic()
    grid = TimeGrid.for_node(node_b, target_dt=1e-9)
    full = dynamics.evolve_full(node_b, grid)
    trace_drift = float(np.abs(full.trace() - 1.0).max())

    restricted = dynamics.evolve_restricted(node_b, grid)
    mc_grid = TimeGrid.for_node(node_b, target_dt=4e-9)
    n_traj = 10_000
    survival = _jump_survival_mc(node_b, mc_grid, n_traj, seed=MASTER_SEED)
    checkpoints = np.array([5.0, 10.0, 20.0, 35.0, 50.0]) * 1e-6
    worst = 0.0
    ok_mc = True
    for t_check in checkpoints:
        p_model = float(np.interp(t_check, grid.times(), restricted.trace()))
        p_mc = float(np.interp(t_check, mc_grid.times(), survival))
        sigma = max(np.sqrt(p_model * (1.0 - p_model) / n_traj), 1e-4)
        pull = abs(p_mc - p_model) / sigma
        worst = max(worst, pull)
        ok_mc &= pull < 3.0
    elapsed = time.monotonic() - start
    _report(2, "trace/branch consistency",
            trace_drift < 1e-8 and ok_mc and elapsed < 60.0,
            f"full-trace drift {trace_drift:.1e} (tol 1e-8), "
            f"jump-oracle worst pull {worst:.2f} sigma (limit 3), "
            f"{elapsed:.1f}s (limit 60s)")


def test_criterion_03_envelope_kernel_cross_validation(node_a, node_b):
    start = time.monotonic()
    worst = 0.0
    for params in (node_a, node_b):
        grid = TimeGrid.for_node(params)
        traj = dynamics.evolve_restricted(params, grid)
        envelopes = dynamics.photon_envelopes(traj, params)
        scattering = dynamics.scattering_rate(traj, params)
        idx = purebranch.coarse_indices(grid)
        kernels = purebranch.exact_coherence_kernels(params, grid, 0.0,
                                                     scattering, idx)
        for kern, env in zip(kernels, envelopes):
            err = np.abs(kern.envelope() - env[idx]).max() / env[idx].max()
            worst = max(worst, float(err))
    elapsed = time.monotonic() - start
    _report(3, "envelope cross-validation",
            worst < 1e-3 and elapsed < 60.0,
            f"worst relative deviation {worst:.2e} (tol 1e-3), "
            f"{elapsed:.1f}s (limit 60s)")


def test_criterion_04_scattering_counts(node_a, node_b):
    results = {}
    for name, params, target in (("nodeA", node_a, 5.3),
                                 ("nodeB", node_b, 2.1)):
        grid = TimeGrid.for_node(params, target_dt=1e-9)
        traj = dynamics.evolve_restricted(params, grid)
        rate = dynamics.scattering_rate(traj, params)
        count = float(np.sum(rate[:-1]) * grid.dt)
        results[name] = (count, target)
    ok = all(abs(count - target) <= 0.1 * target
             for count, target in results.values())
    detail = ", ".join(f"{name} {count:.2f} (target {target} +-10%)"
                       for name, (count, target) in results.items())
    _report(4, "mean scattering events", ok, detail)


def test_criterion_05_hom_bunching_limit(node_b):
    # identical ideal nodes: same parameter set feeding both inputs
    model = pbsm.build_interference_model(node_b, node_b, mode="pure",
                                          target_dt=1e-9)
    det_hh, det_vv = pbsm.parallel_coincidence(model.kernels_a[0],
                                               model.kernels_b)
    curve = pbsm.visibility_from_model(model, KEY_WINDOWS)
    worst_det = 0.0
    for rates in (det_hh, det_vv):
        for t_win in KEY_WINDOWS:
            worst_det = max(worst_det, pbsm.integrated_coincidence(
                rates, model.coarse_times, t_win, window=(5.5e-6, 23e-6)))
    unit_visibility = bool(np.allclose(curve.visibility, 1.0, atol=1e-10))

    # factorized kernels against the literal double restart sum, 20 points
    rng = np.random.default_rng(3)
    times = np.linspace(0.0, 1.0, 20)
    def amp_set():
        base = (rng.normal(size=20) + 1j * rng.normal(size=20)) * \
            np.exp(-(times - 0.5) ** 2 / 0.05)
        weights = rng.uniform(0.0, 0.4, size=3)
        shifts = [np.roll(base, k) * (np.arange(20) >= k) for k in (3, 7, 12)]
        return [base] + shifts, [1.0] + list(weights)
    amps_a, w_a = amp_set()
    amps_b, w_b = amp_set()

    def kernel(amps, weights):
        g = sum(w * np.outer(a, a.conj()) for w, a in zip(weights, amps))
        return purebranch.CoherenceKernel(times=times, matrix=g, kappa=1.0)

    kern_a, kern_b = kernel(amps_a, w_a), kernel(amps_b, w_b)
    det_fact, _ = pbsm.parallel_coincidence((kern_a, kern_a),
                                            (kern_b, kern_b))
    literal = np.zeros((20, 20))
    for wa, aa in zip(w_a, amps_a):
        for wb, ab in zip(w_b, amps_b):
            for i in range(20):
                for j in range(20):
                    literal[i, j] += wa * wb * abs(
                        aa[i] * ab[j] - aa[j] * ab[i]) ** 2
    literal *= 0.25 * 4.0  # eta/4 with both 2*kappa scales equal to 2
    literal_err = float(np.abs(det_fact - literal).max())

    _report(5, "HOM bunching limit",
            worst_det < 1e-10 and unit_visibility and literal_err < 1e-10,
            f"max Det {worst_det:.1e} (tol 1e-10), V==1 {unit_visibility}, "
            f"literal-sum deviation {literal_err:.1e} (tol 1e-10)")


def test_criterion_06_visibility_deconstruction(full_model,
                                                full_model_high_jitter,
                                                no_technical_model,
                                                pure_model):
    start = time.monotonic()
    curves = {}
    for key, model in (("full", full_model), ("full_hj", full_model_high_jitter),
                       ("no_technical", no_technical_model),
                       ("pure", pure_model)):
        curves[key] = pbsm.visibility_from_model(model, SWEEP)
    ordering = bool(
        np.all(curves["pure"].visibility >= curves["no_technical"].visibility
               - 1e-9)
        and np.all(curves["no_technical"].visibility
                   >= curves["full"].visibility - 1e-9))
    v_low = float(curves["full"].visibility[0])
    v_high = float(curves["full_hj"].visibility[0])
    in_band = 0.89 <= v_low <= 1.0 and 0.89 <= v_high <= 1.0
    decreasing = bool(
        np.all(np.diff(curves["full"].visibility) <= 1e-3)
        and np.all(np.diff(curves["full_hj"].visibility) <= 1e-3))
    bracket = bool(np.all(curves["full_hj"].visibility
                          <= curves["full"].visibility + 1e-9))
    elapsed = (time.monotonic() - start + _timings["full_006"]
               + _timings["full_010"] + _timings["no_technical"]
               + _timings["pure"])
    _report(6, "visibility deconstruction",
            ordering and in_band and decreasing and bracket and elapsed < 600,
            f"ordering {ordering}, V_full(0.25us) = {v_low:.3f}/{v_high:.3f} "
            f"(band [0.89, 1.0]), decreasing {decreasing}, "
            f"jitter curves bracket {bracket}, {elapsed:.0f}s (limit 600s)")


def test_criterion_07_empirical_model_numbers():
    f_ii, lam = empirical.ion_ion_depolarizing(0.938, 0.956)
    numbers_ok = abs(f_ii - 0.89763) <= 1e-5 and abs(lam - 0.86351) <= 1e-5
    psi = empirical.bell_state(+1, 0.77)
    rho = np.outer(psi, psi.conj())
    law_ok = all(
        abs(empirical.state_fidelity(empirical.apply_dephasing(rho, v),
                                     +1, 0.77) - (1.0 + v) / 2.0) < 1e-14
        for v in (0.0, 0.31, 0.77, 1.0))
    _report(7, "empirical-model numbers", numbers_ok and law_ok,
            f"F'_ii = {f_ii:.6f} (target 0.89763 +-1e-5), "
            f"lambda = {lam:.6f} (target 0.86351 +-1e-5), "
            f"dephased fidelity law exact {law_ok}")


def test_criterion_08_fidelity_reproduction(full_model, table):
    t_list = np.array([1.0e-6, 17.5e-6])
    curve = pbsm.visibility_from_model(full_model, t_list)
    fid = empirical.model_fidelity_curve(t_list, curve.visibility, table,
                                         0.938, 0.956, +1)
    # measured one-sigma bands widened by 0.05 because the visibility input
    # is the model curve rather than the measured one
    band_1us = (0.822 - 0.05, 0.905 + 0.05)
    band_17us = (0.564 - 0.05, 0.608 + 0.05)
    ok = (band_1us[0] <= fid[0] <= band_1us[1]
          and band_17us[0] <= fid[1] <= band_17us[1])
    _report(8, "fidelity-curve reproduction", ok,
            f"F+(1us) = {fid[0]:.3f} in [{band_1us[0]:.3f}, {band_1us[1]:.3f}], "
            f"F+(17.5us) = {fid[1]:.3f} in [{band_17us[0]:.3f}, "
            f"{band_17us[1]:.3f}] (V from model; widened bands)")


def test_criterion_09_tomography_round_trip():
    psi = empirical.bell_state(+1, 0.9)
    counts = tomo.exact_counts(np.outer(psi, psi.conj()), 10 ** 6)
    fidelity = tomo.bell_fidelity(tomo.mle_reconstruct(counts), +1, 0.9)

    noisy = tomo.sample_counts(0.8 * np.outer(psi, psi.conj())
                               + 0.2 * np.eye(4) / 4.0, 500,
                               np.random.default_rng(1))
    est1 = tomo.resample_uncertainty(noisy, (+1, 0.9), m_resamples=200,
                                     seed=MASTER_SEED)
    est2 = tomo.resample_uncertainty(noisy, (+1, 0.9), m_resamples=200,
                                     seed=MASTER_SEED)
    deterministic = est1 == est2

    uniform = tomo.CountsRecord.from_stacked(
        np.full((9, 4), 250_000, dtype=np.int64))
    rho_u = tomo.mle_reconstruct(uniform)
    distance = 0.5 * np.abs(np.linalg.eigvalsh(rho_u - np.eye(4) / 4)).sum()

    _report(9, "tomography round trip",
            fidelity > 0.999 and deterministic and distance < 1e-3,
            f"Bell fidelity {fidelity:.5f} (>0.999), M=200 resampling "
            f"seed-deterministic {deterministic}, uniform-counts distance "
            f"{distance:.1e} (tol 1e-3)")


def test_criterion_10_end_to_end_statistics(full_model, node_a, node_b,
                                            table):
    start = time.monotonic()
    seq = netsim.SequenceConfig()
    model = netsim.build_detection_model(node_a, node_b, table, seq,
                                         model=full_model)
    model = netsim.calibrate_to_success_probability(
        model, TARGET_COINCIDENCES / N_ATTEMPTS)
    clicks, log = netsim.simulate_attempts(seq, model, N_ATTEMPTS,
                                           seed=MASTER_SEED)
    metrics = netsim.success_metrics(clicks, log, table)
    three_sigma = 3.0 * np.sqrt(TARGET_COINCIDENCES)
    count_ok = abs(metrics.n_coincidences - TARGET_COINCIDENCES) <= three_sigma
    prob_ok = 2.75e-4 <= metrics.success_probability <= 3.05e-4

    hom = netsim.hom_analysis(clicks, table, t_list=KEY_WINDOWS)
    reference = pbsm.visibility_from_model(full_model, hom.t_effective)
    pulls = []
    for i in range(KEY_WINDOWS.size):
        sigma = hom.visibility_sigma(i)
        pulls.append(abs(hom.visibility[i] - reference.visibility[i]) / sigma)
    vis_ok = all(p < 3.0 for p in pulls)
    elapsed = time.monotonic() - start + _timings["full_006"]
    _report(10, "end-to-end statistics",
            count_ok and prob_ok and vis_ok and elapsed < 900,
            f"coincidences {metrics.n_coincidences} (3960 +-{three_sigma:.0f}), "
            f"success {metrics.success_probability:.3e} (~2.9e-4), "
            f"V(T) pulls {'/'.join(f'{p:.1f}' for p in pulls)} sigma (limit 3), "
            f"{elapsed:.0f}s (limit 900s)")
