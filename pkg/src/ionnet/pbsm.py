"""Photonic Bell-state measurement model: coincidences and visibility.

Two photons, one per node, meet on a balanced nonpolarizing beamsplitter
whose outputs are polarization-split onto four detectors.  Orthogonally
polarized photons never interfere, so their coincidence rate is a product
of envelopes; same-polarization photons bunch, and their coincidence rate
carries the two-time coherence kernels of both nodes.  The model visibility
V(T) compares the two classes inside a coincidence window of width T.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from importlib import resources
import json

import numpy as np

from . import purebranch
from .dynamics import (DEFAULT_TARGET_DT, JitterEnsemble, TimeGrid,
                       jitter_ensemble)
from .errors import (NumericalConsistencyError, PresetNotFoundError,
                     UndefinedVisibilityError)
from .hilbert import NodeParams

DETECTOR_NAMES = ("SPCM1", "SPCM2", "SNSPD1", "SNSPD2")


def beamsplitter() -> np.ndarray:
    """Balanced beamsplitter mode transform ((u, r) from (a, b))."""
    return np.array([[1.0, 1.0j], [1.0j, 1.0]], dtype=np.complex128) / np.sqrt(2.0)


def beamsplitter_inverse() -> np.ndarray:
    """Inverse transform ((a, b) from (u, r))."""
    return np.array([[1.0, -1.0j], [-1.0j, 1.0]], dtype=np.complex128) / np.sqrt(2.0)


@dataclass(frozen=True)
class DetectorRecord:
    name: str
    background_rate: float  # counts/s
    p_bg: float  # background probability per detection window
    p_a: float  # background-subtracted detection probability, node A photons
    p_b: float  # same for node B photons
    output: str  # beamsplitter arm, "u" (SNSPD side) or "r" (SPCM side)
    polarization: str  # "v" or "h"

    def __post_init__(self):
        for field_name in ("p_bg", "p_a", "p_b"):
            value = getattr(self, field_name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{field_name} must be a probability")
        if self.output not in ("u", "r") or self.polarization not in ("v", "h"):
            raise ValueError("bad detector port assignment")


@dataclass(frozen=True)
class DetectorTable:
    """The four Bell-state-measurement detectors and their measured rates."""

    records: dict[str, DetectorRecord]

    def __post_init__(self):
        ports = {(r.output, r.polarization) for r in self.records.values()}
        if len(ports) != len(self.records):
            raise ValueError("detector ports must be distinct")

    def __getitem__(self, name: str) -> DetectorRecord:
        return self.records[name]

    def names(self):
        return tuple(self.records)

    def by_port(self, output: str, polarization: str) -> DetectorRecord:
        for rec in self.records.values():
            if rec.output == output and rec.polarization == polarization:
                return rec
        raise KeyError((output, polarization))

    def acceptance(self, name: str) -> float:
        """Relative detector acceptance within its polarization pair.

        Derived from the node-B detection probabilities (same source, same
        ion), normalized so the better detector of each pair has weight 1.
        Absolute efficiencies are not identifiable from the shipped data.
        """
        rec = self.records[name]
        pair_max = max(r.p_b for r in self.records.values()
                       if r.polarization == rec.polarization)
        return rec.p_b / pair_max

    @classmethod
    def from_dict(cls, doc: dict) -> "DetectorTable":
        records = {}
        for name, row in doc.items():
            if name == "comment":
                continue
            records[name] = DetectorRecord(
                name=name,
                background_rate=row["background_per_s"],
                p_bg=row["p_bg_pct"] / 100.0,
                p_a=row["p_A_pct"] / 100.0,
                p_b=row["p_B_pct"] / 100.0,
                output=row["output"],
                polarization=row["polarization"],
            )
        return cls(records=records)

    @classmethod
    def from_preset(cls, name: str = "detectors") -> "DetectorTable":
        try:
            path = resources.files(__package__).joinpath(f"presets/{name}.json")
            return cls.from_dict(json.loads(path.read_text()))
        except FileNotFoundError as exc:
            raise PresetNotFoundError(f"no preset named {name!r}") from exc


# -- coincidence-rate arrays -------------------------------------------------

def _scaled(kern: purebranch.CoherenceKernel) -> np.ndarray:
    return 2.0 * kern.kappa * kern.matrix


def orthogonal_coincidence(kernels_a, kernels_b, eta_vh: float = 1.0,
                           eta_hv: float = 1.0):
    """Two-time rates (det_vh, det_hv) for orthogonally polarized clicks.

    ``det_vh[i, j]`` is the rate for a vertical click at ``t1 = times[i]``
    on one output and a horizontal click at ``t2 = times[j]`` on the other;
    no interference, only envelope products.
    """
    gv_a, gh_a = kernels_a
    gv_b, gh_b = kernels_b
    pv_a, ph_a = gv_a.envelope(), gh_a.envelope()
    pv_b, ph_b = gv_b.envelope(), gh_b.envelope()
    # base[i, j] = p_v^A(t1_i) p_h^B(t2_j) + p_v^B(t1_i) p_h^A(t2_j)
    base = np.outer(pv_a, ph_b) + np.outer(pv_b, ph_a)
    det_vh = 0.25 * eta_vh * base
    det_hv = 0.25 * eta_hv * base
    return det_vh, det_hv


def parallel_coincidence(kernels_a, kernels_b, eta_hh: float = 1.0,
                         eta_vv: float = 1.0):
    """Two-time rates (det_hh, det_vv) for same-polarization clicks.

    The interference term subtracts twice the real part of the product of
    the two nodes' coherence kernels; identical pure photons suppress the
    rate to zero at all time pairs.
    """
    gv_a, gh_a = kernels_a
    gv_b, gh_b = kernels_b
    out = []
    for kern_a, kern_b, eta in ((gh_a, gh_b, eta_hh), (gv_a, gv_b, eta_vv)):
        m_a, m_b = _scaled(kern_a), _scaled(kern_b)
        d_a, d_b = m_a.diagonal().real, m_b.diagonal().real
        base = np.outer(d_a, d_b) + np.outer(d_b, d_a)
        det = 0.25 * eta * (base - 2.0 * np.real(m_a * m_b.T))
        floor = det.min()
        # perfect bunching cancels to roundoff, so negativity is judged
        # against the no-interference level
        scale = max(0.25 * eta * base.max(), 1e-300)
        if floor < -1e-12 * scale:
            raise NumericalConsistencyError(
                f"coincidence rate negative beyond tolerance ({floor/scale:.2e})")
        out.append(np.clip(det, 0.0, None))
    det_hh, det_vv = out
    return det_hh, det_vv


def _band_weights(n_cells: int, cell_dt: float, t_window: float) -> np.ndarray:
    """Fraction of each lag's cell area inside the band |t1 - t2| <= T."""

    def tri_cdf(v):
        v = np.clip(v / cell_dt, -1.0, 1.0)
        return np.where(v <= 0.0, 0.5 * (v + 1.0) ** 2,
                        1.0 - 0.5 * (1.0 - v) ** 2)

    lags = np.arange(-(n_cells - 1), n_cells) * cell_dt
    return tri_cdf(t_window - lags) - tri_cdf(-t_window - lags)


def _windowed_lag_sums(rates: np.ndarray, times: np.ndarray,
                       window: tuple[float, float] | None):
    """Sum the rate cells along each lag diagonal inside the window."""
    cell_dt = float(times[1] - times[0])
    keep = np.arange(len(times) - 1)
    if window is not None:
        w0, w1 = window
        t0 = times[keep]
        keep = keep[(t0 >= w0 - 1e-12) & (t0 + cell_dt <= w1 + 1e-12)]
    sub = rates[np.ix_(keep, keep)]
    n = len(keep)
    lag_sums = np.array([np.trace(sub, offset=k) for k in range(-(n - 1), n)])
    return lag_sums, n, cell_dt


def integrated_coincidence(rates: np.ndarray, times: np.ndarray, t_window: float,
                           window: tuple[float, float] | None = None) -> float:
    """Integral of a two-time rate over the band ``|t1 - t2| <= t_window``.

    ``rates[i, j]`` is treated as constant on the grid cell starting at
    ``(times[i], times[j])``; cells crossing the band edge contribute their
    exact overlap fraction, so the result is continuous and monotone in
    ``t_window`` and vanishes at ``t_window = 0``.  ``window`` restricts the
    detection times to cells inside ``[w0, w1]``.
    """
    if t_window < 0:
        raise ValueError("t_window must be nonnegative")
    lag_sums, n, cell_dt = _windowed_lag_sums(rates, times, window)
    weights = _band_weights(n, cell_dt, t_window)
    return float((lag_sums * weights).sum() * cell_dt * cell_dt)


# -- full visibility pipeline ------------------------------------------------

MODES = ("full", "no_technical", "pure")


@dataclass(frozen=True)
class InterferenceModel:
    """Per-offset coherence kernels and envelopes for a node pair."""

    node_a: NodeParams
    node_b: NodeParams
    mode: str
    coarse_times: np.ndarray
    offsets_a: np.ndarray
    weights_a: np.ndarray
    kernels_a: tuple  # one (G_v, G_h) pair per offset
    kernels_b: tuple  # single (G_v, G_h) pair
    fine_times_a: np.ndarray
    fine_times_b: np.ndarray
    fine_envelopes_a: tuple  # one (p_v, p_h) pair per offset
    fine_envelopes_b: tuple  # single (p_v, p_h) pair


def _mode_params(params: NodeParams, mode: str) -> NodeParams:
    if mode == "full":
        return params
    return replace(params, gamma_ss=0.0, gamma_clj=0.0)


def build_interference_model(node_a: NodeParams, node_b: NodeParams,
                             ensemble_a: JitterEnsemble | None = None,
                             mode: str = "full",
                             coarse_dt: float = 0.25e-6,
                             target_dt: float = DEFAULT_TARGET_DT,
                             t_end: float | None = None) -> InterferenceModel:
    """Compute kernels and envelopes for both nodes under a noise mode.

    Modes: ``full`` keeps every noise source and the node-A jitter ensemble;
    ``no_technical`` zeroes laser dephasing and cavity jitter;
    ``pure`` additionally drops the scattering contributions, leaving the
    no-scattering pure wavepackets.
    """
    from .dynamics import evolve_restricted, photon_envelopes

    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    node_a = _mode_params(node_a, mode)
    node_b = _mode_params(node_b, mode)
    if mode != "full" or ensemble_a is None:
        ensemble_a = jitter_ensemble(node_a.gamma_clj)
    include_scattering = mode != "pure"

    grid_a = TimeGrid.for_node(node_a, t_end=t_end, target_dt=target_dt)
    grid_b = TimeGrid.for_node(node_b, t_end=t_end, target_dt=target_dt)
    idx_a = purebranch.coarse_indices(grid_a, coarse_dt)
    idx_b = purebranch.coarse_indices(grid_b, coarse_dt)
    n_c = min(idx_a.size, idx_b.size)
    idx_a, idx_b = idx_a[:n_c], idx_b[:n_c]
    coarse_times = np.arange(n_c) * coarse_dt

    kernels_a = []
    envelopes_a = []
    for offset in ensemble_a.offsets:
        kernels_a.append(purebranch.node_kernels(
            node_a, grid_a, offset, idx_a, include_scattering))
        traj = evolve_restricted(node_a, grid_a, offset)
        envelopes_a.append(photon_envelopes(traj, node_a))
    kernels_b = purebranch.node_kernels(node_b, grid_b, 0.0, idx_b,
                                        include_scattering)
    traj_b = evolve_restricted(node_b, grid_b, 0.0)
    envelopes_b = photon_envelopes(traj_b, node_b)

    return InterferenceModel(
        node_a=node_a, node_b=node_b, mode=mode, coarse_times=coarse_times,
        offsets_a=np.asarray(ensemble_a.offsets),
        weights_a=np.asarray(ensemble_a.weights),
        kernels_a=tuple(kernels_a), kernels_b=kernels_b,
        fine_times_a=grid_a.times(), fine_times_b=grid_b.times(),
        fine_envelopes_a=tuple(envelopes_a), fine_envelopes_b=envelopes_b)


@dataclass(frozen=True)
class VisibilityCurve:
    t_list: np.ndarray
    visibility: np.ndarray
    mode: str
    det_parallel: np.ndarray
    det_orthogonal: np.ndarray
    per_offset_visibility: np.ndarray  # (n_offsets, n_T)


def visibility_from_model(model: InterferenceModel, t_list,
                          window: tuple[float, float] | None = (5.5e-6, 23e-6),
                          ) -> VisibilityCurve:
    """V(T) with jitter applied to the integrated rates, not the ratio."""
    t_list = np.asarray(t_list, dtype=float)
    times = model.coarse_times
    n_off = len(model.offsets_a)
    dets = np.zeros((n_off, 2, t_list.size))  # [offset, parallel/orthogonal, T]
    for k in range(n_off):
        det_vh, det_hv = orthogonal_coincidence(model.kernels_a[k],
                                                model.kernels_b)
        det_hh, det_vv = parallel_coincidence(model.kernels_a[k],
                                              model.kernels_b)
        for cls, rate_pair in ((0, (det_hh, det_vv)), (1, (det_vh, det_hv))):
            for rates in rate_pair:
                lag_sums, n, cell_dt = _windowed_lag_sums(rates, times, window)
                for it, t_win in enumerate(t_list):
                    weights = _band_weights(n, cell_dt, t_win)
                    dets[k, cls, it] += float(
                        (lag_sums * weights).sum() * cell_dt * cell_dt)
    weights = model.weights_a[:, None]
    par = (weights * dets[:, 0, :]).sum(axis=0)
    orth = (weights * dets[:, 1, :]).sum(axis=0)
    if np.any(orth <= 0.0):
        raise UndefinedVisibilityError("no orthogonal coincidences in window")
    with np.errstate(divide="ignore", invalid="ignore"):
        per_offset = 1.0 - dets[:, 0, :] / dets[:, 1, :]
    return VisibilityCurve(t_list=t_list, visibility=1.0 - par / orth,
                           mode=model.mode, det_parallel=par,
                           det_orthogonal=orth,
                           per_offset_visibility=per_offset)


def model_visibility(node_a: NodeParams, node_b: NodeParams, t_list,
                     mode: str = "full",
                     ensemble_a: JitterEnsemble | None = None,
                     window: tuple[float, float] | None = (5.5e-6, 23e-6),
                     coarse_dt: float = 0.25e-6,
                     target_dt: float = DEFAULT_TARGET_DT) -> VisibilityCurve:
    """Model interference visibility V(T) for one noise mode.

    Detector efficiencies cancel in the ratio when all four are equal, so
    the model is evaluated with unit efficiencies; comparisons against
    measured curves assume those were efficiency-corrected.
    """
    model = build_interference_model(node_a, node_b, ensemble_a, mode,
                                     coarse_dt, target_dt)
    return visibility_from_model(model, t_list, window)


def write_visibility_csv(path, t_list, curves: dict, header_lines=()) -> None:
    """CSV with one column per mode (T_us, V_full, V_no_technical, V_pure)."""
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("T_us,V_full,V_no_technical,V_pure\n")
        for i, t_win in enumerate(np.asarray(t_list)):
            row = [f"{t_win * 1e6:.3f}"]
            for mode in MODES:
                row.append(f"{curves[mode].visibility[i]:.9f}")
            fh.write(",".join(row) + "\n")
