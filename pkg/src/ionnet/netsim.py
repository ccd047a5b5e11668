"""Discrete-event simulation of the two-node protocol and click analysis.

Covers the control-plane handshake timing, the photon-generation loop, and
stochastic click generation at the four Bell-state-measurement detectors,
including two-photon interference correlations for same-polarization pairs
and Poisson detector backgrounds.  The analysis side turns click records
(real or synthetic) into coincidence histograms, a measured interference
visibility, and success metrics.

Click timestamps are seconds from the start of each attempt's detection
window; backgrounds extend to 100 us, past the photon envelopes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import JitterEnsemble, jitter_ensemble
from .errors import HandshakeTimeoutError, UndefinedVisibilityError
from .hilbert import NodeParams
from .pbsm import DetectorTable, InterferenceModel, build_interference_model

BG_SPAN = 100e-6  # background-generation span per attempt


# -- handshake ----------------------------------------------------------------

@dataclass(frozen=True)
class HandshakeConfig:
    """Latencies and processing delays of the four-step TTL handshake."""

    latency_ab: float = 2.55e-6
    latency_ba: float = 2.55e-6
    processing_a: float = 0.0
    processing_b: float = 0.0
    clock_skew: float = 5e-9  # fractional rate mismatch (50 mHz on 10 MHz)
    timeout: float = 100e-6

    def __post_init__(self):
        if self.latency_ab < 0 or self.latency_ba < 0:
            raise ValueError("latencies must be nonnegative")
        if self.processing_a < 0 or self.processing_b < 0:
            raise ValueError("processing delays must be nonnegative")
        if self.timeout <= 2.0 * (self.latency_ab + self.latency_ba):
            raise ValueError("timeout must exceed two full round trips")


@dataclass(frozen=True)
class HandshakeResult:
    duration: float
    events: tuple  # ((name, t_sent, t_received), ...) in protocol order
    loop_start_a: float
    loop_start_b: float


def run_handshake(cfg: HandshakeConfig) -> HandshakeResult:
    """Schedule the four TTL transitions and both loop-start offsets.

    Raises :class:`HandshakeTimeoutError` carrying the last completed step
    if any edge would be received after the timeout.
    """
    steps = []
    t = 0.0
    t_recv = t + cfg.latency_ab
    steps.append(("ttl_ab_high", t, t_recv))
    t = t_recv + cfg.processing_b
    t_recv = t + cfg.latency_ba
    steps.append(("ttl_ba_high", t, t_recv))
    t = t_recv + cfg.processing_a
    t_recv = t + cfg.latency_ab
    steps.append(("ttl_ab_low", t, t_recv))
    t = t_recv + cfg.processing_b
    t_recv = t + cfg.latency_ba
    steps.append(("ttl_ba_low", t, t_recv))

    for i, (_, _, received) in enumerate(steps):
        if received > cfg.timeout:
            raise HandshakeTimeoutError(
                f"handshake timed out after step {i}", last_completed_step=i)
    duration = steps[-1][2] - steps[0][1]
    return HandshakeResult(duration=duration, events=tuple(steps),
                           loop_start_a=steps[-1][2],
                           loop_start_b=steps[-1][1])


def clock_offset_bound(skew_rate: float, duration: float) -> float:
    """Worst-case timing offset accumulated by a fractional rate mismatch."""
    return abs(skew_rate) * duration


# -- sequence and click records ------------------------------------------------

@dataclass(frozen=True)
class SequenceConfig:
    """Per-iteration timing of the photon-generation loop."""

    cooling_a: float = 63e-6
    pumping_a: float = 280e-6
    raman_a: float = 50e-6
    cooling_b: float = 60e-6
    pumping_b: float = 60e-6
    raman_b: float = 50e-6
    iteration: float = 420e-6
    max_iterations: int = 20
    detection_window: tuple[float, float] = (5.5e-6, 23e-6)
    background_window: tuple[float, float] = (70e-6, 100e-6)
    detection_span: float = 50e-6

    def __post_init__(self):
        for node in "ab":
            total = (getattr(self, f"cooling_{node}")
                     + getattr(self, f"pumping_{node}")
                     + getattr(self, f"raman_{node}"))
            if total > self.iteration + 1e-12:
                raise ValueError("iteration shorter than its phases")
        if self.detection_window[1] > self.background_window[0]:
            raise ValueError("detection and background windows overlap")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")


@dataclass(frozen=True)
class ClickEvent:
    """One detector click (scalar view of :class:`ClickRecords`)."""

    attempt: int
    detector: str
    t: float
    origin: str  # "photon", "background", or "unknown"


ORIGIN_CODES = {"photon": 0, "background": 1, "unknown": -1}
ORIGIN_NAMES = {v: k for k, v in ORIGIN_CODES.items()}


@dataclass
class ClickRecords:
    """Columnar click storage: one row per detector click."""

    attempt: np.ndarray  # int64
    detector: np.ndarray  # int16 index into detector_names
    t: np.ndarray  # float64 seconds within the attempt window
    origin: np.ndarray  # int8 per ORIGIN_CODES
    detector_names: tuple
    n_attempts: int

    def __len__(self):
        return self.attempt.size

    def __iter__(self):
        for i in range(len(self)):
            yield ClickEvent(attempt=int(self.attempt[i]),
                             detector=self.detector_names[self.detector[i]],
                             t=float(self.t[i]),
                             origin=ORIGIN_NAMES[int(self.origin[i])])

    def to_csv(self, path, header_lines=()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write(f"# n_attempts={self.n_attempts}\n")
            fh.write(f"# detectors={','.join(self.detector_names)}\n")
            fh.write("attempt,detector,t_us,origin\n")
            for i in range(len(self)):
                fh.write(f"{self.attempt[i]},"
                         f"{self.detector_names[self.detector[i]]},"
                         f"{self.t[i] * 1e6:.6f},"
                         f"{ORIGIN_NAMES[int(self.origin[i])]}\n")

    @classmethod
    def from_csv(cls, path) -> "ClickRecords":
        n_attempts = 0
        names: tuple = ()
        rows = []
        with open(path) as fh:
            header = None
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    body = line[1:].strip()
                    if body.startswith("n_attempts="):
                        n_attempts = int(body.split("=", 1)[1])
                    elif body.startswith("detectors="):
                        names = tuple(body.split("=", 1)[1].split(","))
                    continue
                if header is None:
                    header = line.split(",")
                    continue
                rows.append(line.split(","))
        has_origin = header is not None and "origin" in header
        if not names:
            names = tuple(sorted({r[1] for r in rows}))
        name_idx = {n: i for i, n in enumerate(names)}
        attempt = np.array([int(r[0]) for r in rows], dtype=np.int64)
        detector = np.array([name_idx[r[1]] for r in rows], dtype=np.int16)
        t = np.array([float(r[2]) * 1e-6 for r in rows])
        if has_origin:
            origin = np.array([ORIGIN_CODES.get(r[3], -1) for r in rows],
                              dtype=np.int8)
        else:
            origin = np.full(len(rows), -1, dtype=np.int8)
        return cls(attempt=attempt, detector=detector, t=t, origin=origin,
                   detector_names=names, n_attempts=n_attempts or
                   (int(attempt.max()) + 1 if attempt.size else 0))


@dataclass(frozen=True)
class AttemptLog:
    """Summary of one simulated run."""

    n_requested: int
    n_executed: int
    block_size: int
    herald_mode: bool
    herald_attempts: np.ndarray  # attempt indices that heralded

    @property
    def n_blocks(self) -> int:
        return math.ceil(self.n_requested / self.block_size)


# -- detection model -----------------------------------------------------------

@dataclass(frozen=True)
class DetectionModel:
    """Everything needed to thin model photons into detector clicks.

    Click probabilities are anchored to the measured per-detector detection
    probabilities (scaled by ``photon_scale``); the model contributes the
    temporal envelopes, the per-offset jitter variation, and the two-photon
    interference kernels that correlate same-polarization routing.
    """

    detectors: DetectorTable
    seq: SequenceConfig
    offsets: np.ndarray
    offset_weights: np.ndarray
    # per node: tau[offset, pol] with pol 0 = v, 1 = h (B has one offset row)
    tau_a: np.ndarray
    tau_b: np.ndarray
    # inverse-CDF tables: times plus cumulative distributions per offset/pol
    times_a: np.ndarray
    cdf_a: np.ndarray  # (n_offsets, 2, n_times)
    times_b: np.ndarray
    cdf_b: np.ndarray  # (1, 2, n_times)
    # interference lookup on the coarse grid
    coarse_dt: float
    interference_num: np.ndarray  # (n_offsets, 2, C, C) Re[G_A G_B^T]
    diag_a: np.ndarray  # (n_offsets, 2, C)
    diag_b: np.ndarray  # (2, C)
    acceptance: np.ndarray  # per detector, aligned with detector order
    detector_names: tuple
    detector_ports: tuple  # (output, polarization) per detector
    background_rates: np.ndarray
    photon_scale: float

    def rescaled(self, factor: float) -> "DetectionModel":
        """Copy with all photon click probabilities scaled by ``factor``."""
        from dataclasses import replace

        tau_a = self.tau_a * factor
        tau_b = self.tau_b * factor
        if np.any(tau_a.sum(axis=1) > 1.0) or np.any(tau_b.sum(axis=1) > 1.0):
            raise ValueError("rescaled photon probabilities exceed 1")
        return replace(self, tau_a=tau_a, tau_b=tau_b,
                       photon_scale=self.photon_scale * factor)


_POL_INDEX = {"v": 0, "h": 1}


def _window_fraction(times, cdf_rows, window):
    w0, w1 = window
    hi = np.array([np.interp(w1, times, row) for row in cdf_rows])
    lo = np.array([np.interp(w0, times, row) for row in cdf_rows])
    return hi - lo


def expected_herald_probability(model: DetectionModel) -> float:
    """Per-attempt probability of a heralding coincidence under the model.

    Orthogonal-polarization pairs at the three heralding detector pairings;
    photon-photon, photon-background and background-background terms
    included, all restricted to the detection window.
    """
    seq = model.seq
    window = seq.detection_window
    span = window[1] - window[0]
    wfrac_a = _window_fraction(
        model.times_a, model.cdf_a.reshape(-1, model.cdf_a.shape[-1]),
        window).reshape(-1, 2)
    wfrac_b = _window_fraction(
        model.times_b, model.cdf_b.reshape(-1, model.cdf_b.shape[-1]),
        window).reshape(-1, 2)

    port_index = {port: i for i, port in enumerate(model.detector_ports)}
    q = {}  # (node, detector index) -> in-window click probability
    for pol, pol_idx in _POL_INDEX.items():
        for output in ("u", "r"):
            det = port_index[(output, pol)]
            share = 0.5 * model.acceptance[det]
            q[("A", det)] = float((model.offset_weights
                                   * model.tau_a[:, pol_idx]
                                   * wfrac_a[:, pol_idx]).sum()) * share
            q[("B", det)] = float(model.tau_b[0, pol_idx]
                                  * wfrac_b[0, pol_idx]) * share
    p_bg = model.background_rates * span

    herald_pairs = [(port_index[("u", "v")], port_index[("u", "h")]),
                    (port_index[("u", "v")], port_index[("r", "h")]),
                    (port_index[("u", "h")], port_index[("r", "v")])]
    total = 0.0
    for r1, r2 in herald_pairs:
        ph_ph = q[("A", r1)] * q[("B", r2)] + q[("B", r1)] * q[("A", r2)]
        ph_bg = ((q[("A", r1)] + q[("B", r1)]) * p_bg[r2]
                 + (q[("A", r2)] + q[("B", r2)]) * p_bg[r1])
        total += ph_ph + ph_bg + p_bg[r1] * p_bg[r2]
    return total


def calibrate_to_success_probability(model: DetectionModel,
                                     target: float) -> DetectionModel:
    """Rescale photon probabilities so heralds occur at the target rate.

    The herald probability is quadratic in the photon scale (photon-photon
    terms) with a linear background cross term, so the factor follows from
    one quadratic solve.
    """
    base = expected_herald_probability(model)
    zero = expected_herald_probability(model.rescaled(1e-12))
    # decompose P(s) = a s^2 + b s + c from three cheap evaluations
    half = expected_herald_probability(model.rescaled(0.5))
    c = zero
    a = 2.0 * base + 2.0 * c - 4.0 * half
    b = base - a - c
    disc = b * b - 4.0 * a * (c - target)
    if a <= 0 or disc < 0:
        raise ValueError("cannot reach the target success probability")
    factor = (-b + math.sqrt(disc)) / (2.0 * a)
    return model.rescaled(factor)


def _envelope_cdf(times: np.ndarray, envelope: np.ndarray):
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (envelope[1:] + envelope[:-1])
                                           * np.diff(times))])
    total = cdf[-1]
    return cdf / total if total > 0 else cdf


def build_detection_model(node_a: NodeParams, node_b: NodeParams,
                          detectors: DetectorTable,
                          seq: SequenceConfig | None = None,
                          ensemble_a: JitterEnsemble | None = None,
                          photon_scale: float = 1.0,
                          model: InterferenceModel | None = None,
                          coarse_dt: float = 0.25e-6,
                          target_dt: float | None = None) -> DetectionModel:
    """Assemble the stochastic click model from physics and detector data."""
    from .dynamics import DEFAULT_TARGET_DT

    seq = seq or SequenceConfig()
    if ensemble_a is None:
        ensemble_a = jitter_ensemble(node_a.gamma_clj)
    if model is None:
        model = build_interference_model(
            node_a, node_b, ensemble_a, mode="full", coarse_dt=coarse_dt,
            target_dt=target_dt or DEFAULT_TARGET_DT)

    names = tuple(detectors.names())
    ports = tuple((detectors[n].output, detectors[n].polarization)
                  for n in names)
    acceptance = np.array([detectors.acceptance(n) for n in names])
    bg_rates = np.array([detectors[n].background_rate for n in names])

    w0, w1 = seq.detection_window

    def node_tau(times, envelopes, weights, table_total):
        """tau[offset, pol] anchored to the node's total click probability.

        The polarization split and per-offset yield follow the model
        emission probabilities; the measured per-detector table fixes only
        the node total (the table's own V/H asymmetry tracks detector
        efficiency, which enters through the acceptance weights instead).
        """
        n_off = len(envelopes)
        full = np.zeros((n_off, 2))
        win = np.zeros((n_off, 2))
        mask = (times >= w0) & (times <= w1)
        for k, (env_v, env_h) in enumerate(envelopes):
            for pol_idx, env in enumerate((env_v, env_h)):
                full[k, pol_idx] = np.trapezoid(env, times)
                win[k, pol_idx] = np.trapezoid(env[mask], times[mask])
        denom = 0.0
        for pol, pol_idx in _POL_INDEX.items():
            accept_pair = (detectors.acceptance(detectors.by_port("u", pol).name)
                           + detectors.acceptance(detectors.by_port("r", pol).name))
            denom += 0.5 * accept_pair * float((weights * win[:, pol_idx]).sum())
        return photon_scale * table_total * full / denom

    total_a = sum(detectors[n].p_a for n in names)
    total_b = sum(detectors[n].p_b for n in names)
    tau_a = node_tau(model.fine_times_a, model.fine_envelopes_a,
                     model.weights_a, total_a)
    tau_b = node_tau(model.fine_times_b, [model.fine_envelopes_b],
                     np.ones(1), total_b)
    if np.any(tau_a.sum(axis=1) > 1.0) or np.any(tau_b.sum(axis=1) > 1.0):
        raise ValueError("calibrated photon probabilities exceed 1")

    cdf_a = np.array([[_envelope_cdf(model.fine_times_a, env[pol])
                       for pol in (0, 1)] for env in model.fine_envelopes_a])
    cdf_b = np.array([[_envelope_cdf(model.fine_times_b,
                                     model.fine_envelopes_b[pol])
                       for pol in (0, 1)]])

    n_c = model.coarse_times.size
    num = np.empty((len(model.offsets_a), 2, n_c, n_c))
    diag_a = np.empty((len(model.offsets_a), 2, n_c))
    gv_b, gh_b = model.kernels_b
    diag_b = np.array([gv_b.matrix.diagonal().real,
                       gh_b.matrix.diagonal().real])
    for k, (gv_a, gh_a) in enumerate(model.kernels_a):
        for pol_idx, (ka, kb) in enumerate(((gv_a, gv_b), (gh_a, gh_b))):
            num[k, pol_idx] = np.real(ka.matrix * kb.matrix.T)
            diag_a[k, pol_idx] = ka.matrix.diagonal().real

    return DetectionModel(
        detectors=detectors, seq=seq, offsets=np.asarray(model.offsets_a),
        offset_weights=np.asarray(model.weights_a), tau_a=tau_a, tau_b=tau_b,
        times_a=model.fine_times_a, cdf_a=cdf_a,
        times_b=model.fine_times_b, cdf_b=cdf_b,
        coarse_dt=float(model.coarse_times[1] - model.coarse_times[0]),
        interference_num=num, diag_a=diag_a, diag_b=diag_b,
        acceptance=acceptance, detector_names=names, detector_ports=ports,
        background_rates=bg_rates, photon_scale=photon_scale)


def _sample_times(times, cdf_rows, group_idx, uniforms):
    """Inverse-CDF sampling where each draw uses its group's CDF row."""
    out = np.empty(uniforms.size)
    for g in np.unique(group_idx):
        mask = group_idx == g
        out[mask] = np.interp(uniforms[mask], cdf_rows[g], times)
    return out


def _bilinear(grid: np.ndarray, x: np.ndarray, y: np.ndarray, dt: float):
    n = grid.shape[0]
    fx = np.clip(x / dt, 0.0, n - 1.000001)
    fy = np.clip(y / dt, 0.0, n - 1.000001)
    ix, iy = fx.astype(np.int64), fy.astype(np.int64)
    ax, ay = fx - ix, fy - iy
    return ((1 - ax) * (1 - ay) * grid[ix, iy]
            + ax * (1 - ay) * grid[ix + 1, iy]
            + (1 - ax) * ay * grid[ix, iy + 1]
            + ax * ay * grid[ix + 1, iy + 1])


def _interp_rows(rows: np.ndarray, x: np.ndarray, dt: float):
    n = rows.shape[-1]
    fx = np.clip(x / dt, 0.0, n - 1.000001)
    ix = fx.astype(np.int64)
    ax = fx - ix
    return (1 - ax) * rows[..., ix] + ax * rows[..., ix + 1]


def simulate_attempts(seq: SequenceConfig, model: DetectionModel,
                      n_attempts: int, seed: int = 0,
                      herald_mode: bool = False,
                      batch_size: int = 1_000_000):
    """Generate detector clicks for a run of photon-generation attempts.

    Per attempt each node contributes at most one photon; same-polarization
    photon pairs are routed through the beamsplitter with the interference
    correlation of the underlying kernels, so downstream analysis recovers
    the model's coincidence statistics.  Backgrounds are Poisson per
    detector over the full 100 us span.  In herald mode a heralding
    coincidence (two clicks of orthogonal polarization, not the bare-SPCM
    pair, inside the detection span) terminates the remaining attempts of
    its block.
    """
    rng = np.random.default_rng(seed)
    n_det = len(model.detector_names)
    port_index = {port: i for i, port in enumerate(model.detector_ports)}
    det_for = np.array([[port_index[("u", "v")], port_index[("u", "h")]],
                        [port_index[("r", "v")], port_index[("r", "h")]]])
    pol_of_det = np.array([_POL_INDEX[p] for _, p in model.detector_ports])

    chunks = {"attempt": [], "detector": [], "t": [], "origin": []}

    def emit(attempt, detector, t, origin_code):
        chunks["attempt"].append(attempt)
        chunks["detector"].append(detector.astype(np.int16))
        chunks["t"].append(t)
        chunks["origin"].append(np.full(attempt.size, origin_code,
                                        dtype=np.int8))

    tau_a_tot = model.tau_a.sum(axis=1)
    tau_b_tot = model.tau_b.sum(axis=1)

    for start in range(0, n_attempts, batch_size):
        n = min(batch_size, n_attempts - start)
        attempts = start + np.arange(n, dtype=np.int64)

        k_off = rng.choice(len(model.offsets), size=n,
                           p=model.offset_weights)
        u_a = rng.random(n)
        has_a = u_a < tau_a_tot[k_off]
        pol_a = np.where(u_a < model.tau_a[k_off, 0], 0, 1)
        u_b = rng.random(n)
        has_b = u_b < tau_b_tot[0]
        pol_b = np.where(u_b < model.tau_b[0, 0], 0, 1)

        idx_a = np.flatnonzero(has_a)
        idx_b = np.flatnonzero(has_b)
        t_a = np.zeros(n)
        t_b = np.zeros(n)
        if idx_a.size:
            group = k_off[idx_a] * 2 + pol_a[idx_a]
            t_a[idx_a] = _sample_times(
                model.times_a, model.cdf_a.reshape(-1, model.cdf_a.shape[-1]),
                group, rng.random(idx_a.size))
        if idx_b.size:
            t_b[idx_b] = _sample_times(
                model.times_b, model.cdf_b.reshape(-1, model.cdf_b.shape[-1]),
                pol_b[idx_b], rng.random(idx_b.size))

        # routing: 0 -> output u, 1 -> output r
        out_a = rng.integers(0, 2, size=n)
        out_b = rng.integers(0, 2, size=n)
        both = has_a & has_b
        same = both & (pol_a == pol_b)
        idx_s = np.flatnonzero(same)
        if idx_s.size:
            pol = pol_a[idx_s]
            k = k_off[idx_s]
            num = np.empty(idx_s.size)
            d_a = np.empty(idx_s.size)
            d_a2 = np.empty(idx_s.size)
            d_b = np.empty(idx_s.size)
            d_b2 = np.empty(idx_s.size)
            for kk in np.unique(k):
                for pp in (0, 1):
                    msk = (k == kk) & (pol == pp)
                    if not np.any(msk):
                        continue
                    num[msk] = _bilinear(model.interference_num[kk, pp],
                                         t_a[idx_s][msk], t_b[idx_s][msk],
                                         model.coarse_dt)
                    d_a[msk] = _interp_rows(model.diag_a[kk, pp],
                                            t_a[idx_s][msk], model.coarse_dt)
                    d_a2[msk] = _interp_rows(model.diag_a[kk, pp],
                                             t_b[idx_s][msk], model.coarse_dt)
                    d_b[msk] = _interp_rows(model.diag_b[pp],
                                            t_b[idx_s][msk], model.coarse_dt)
                    d_b2[msk] = _interp_rows(model.diag_b[pp],
                                             t_a[idx_s][msk], model.coarse_dt)
            denom = d_a * d_b + d_a2 * d_b2
            with np.errstate(divide="ignore", invalid="ignore"):
                x_corr = np.where(denom > 0, 2.0 * num / denom, 0.0)
            x_corr = np.clip(x_corr, -1.0, 1.0)
            u = rng.random(idx_s.size)
            # outcomes: both u with (1+X)/4, both r with (1+X)/4, else split
            p_uu = 0.25 * (1.0 + x_corr)
            both_u = u < p_uu
            both_r = (~both_u) & (u < 2.0 * p_uu)
            split = ~(both_u | both_r)
            swap = rng.random(idx_s.size) < 0.5
            oa = np.where(both_u, 0, np.where(both_r, 1,
                                              np.where(swap, 1, 0)))
            ob = np.where(both_u, 0, np.where(both_r, 1,
                                              np.where(swap, 0, 1)))
            oa = np.where(split, np.where(swap, 1, 0), oa)
            ob = np.where(split, np.where(swap, 0, 1), ob)
            out_a[idx_s] = oa
            out_b[idx_s] = ob

        accept_a = has_a & (rng.random(n)
                            < model.acceptance[det_for[out_a, pol_a]])
        accept_b = has_b & (rng.random(n)
                            < model.acceptance[det_for[out_b, pol_b]])
        det_a = det_for[out_a, pol_a]
        det_b = det_for[out_b, pol_b]

        # photons landing on the same detector produce a single click
        merged = accept_a & accept_b & (det_a == det_b)
        drop_b = merged  # keep the earlier click
        keep_b = accept_b & ~(drop_b & (t_b >= t_a))
        keep_a = accept_a & ~(drop_b & (t_b < t_a))

        ia = np.flatnonzero(keep_a)
        emit(attempts[ia], det_a[ia], t_a[ia], ORIGIN_CODES["photon"])
        ib = np.flatnonzero(keep_b)
        emit(attempts[ib], det_b[ib], t_b[ib], ORIGIN_CODES["photon"])

        for d in range(n_det):
            lam = model.background_rates[d] * BG_SPAN
            count = rng.poisson(lam * n)
            if count == 0:
                continue
            at = start + rng.integers(0, n, size=count).astype(np.int64)
            tt = rng.random(count) * BG_SPAN
            emit(at, np.full(count, d, dtype=np.int16), tt,
                 ORIGIN_CODES["background"])

    attempt = np.concatenate(chunks["attempt"]) if chunks["attempt"] else \
        np.empty(0, dtype=np.int64)
    detector = np.concatenate(chunks["detector"]) if chunks["detector"] else \
        np.empty(0, dtype=np.int16)
    t_arr = np.concatenate(chunks["t"]) if chunks["t"] else np.empty(0)
    origin = np.concatenate(chunks["origin"]) if chunks["origin"] else \
        np.empty(0, dtype=np.int8)

    order = np.lexsort((t_arr, attempt))
    clicks = ClickRecords(attempt=attempt[order], detector=detector[order],
                          t=t_arr[order], origin=origin[order],
                          detector_names=model.detector_names,
                          n_attempts=n_attempts)

    herald_attempts = _herald_attempts(clicks, model,
                                       window=(0.0, seq.detection_span))
    n_executed = n_attempts
    if herald_mode:
        clicks, herald_attempts, n_executed = _truncate_blocks(
            clicks, herald_attempts, seq.max_iterations, n_attempts)
    log = AttemptLog(n_requested=n_attempts, n_executed=n_executed,
                     block_size=seq.max_iterations, herald_mode=herald_mode,
                     herald_attempts=herald_attempts)
    return clicks, log


# -- coincidence analysis -------------------------------------------------------

def _pairs_in_window(clicks: ClickRecords, window):
    """All same-attempt pairs of clicks at distinct detectors in a window.

    Returns (attempt, det1, det2, t1, t2) arrays; pair order is by
    ascending detector index.
    """
    w0, w1 = window
    mask = (clicks.t >= w0) & (clicks.t <= w1)
    att = clicks.attempt[mask]
    det = clicks.detector[mask]
    tt = clicks.t[mask]
    order = np.argsort(att, kind="stable")
    att, det, tt = att[order], det[order], tt[order]
    uniq, starts, counts = np.unique(att, return_index=True,
                                     return_counts=True)
    rows = []
    for a, s, c in zip(uniq, starts, counts):
        if c < 2:
            continue
        for i in range(s, s + c):
            for j in range(i + 1, s + c):
                if det[i] == det[j]:
                    continue
                if det[i] < det[j]:
                    rows.append((a, det[i], det[j], tt[i], tt[j]))
                else:
                    rows.append((a, det[j], det[i], tt[j], tt[i]))
    if not rows:
        return (np.empty(0, dtype=np.int64),) + \
            tuple(np.empty(0, dtype=int) for _ in range(2)) + \
            tuple(np.empty(0) for _ in range(2))
    arr = np.array(rows, dtype=float)
    return (arr[:, 0].astype(np.int64), arr[:, 1].astype(int),
            arr[:, 2].astype(int), arr[:, 3], arr[:, 4])


def _port_maps(clicks: ClickRecords, table: DetectorTable):
    outputs = []
    pols = []
    for name in clicks.detector_names:
        rec = table[name]
        outputs.append(rec.output)
        pols.append(rec.polarization)
    return np.array(outputs), np.array(pols)


def _herald_attempts(clicks: ClickRecords, model: DetectionModel,
                     window) -> np.ndarray:
    """Attempts with a heralding coincidence inside ``window``.

    Heralds are orthogonal-polarization pairs at the pairings actually used
    to post-select entangled states: the same-output pair on the
    low-background arm and the two cross-output pairs.  The remaining
    same-output orthogonal pair is excluded.
    """
    att, d1, d2, _, _ = _pairs_in_window(clicks, window)
    if att.size == 0:
        return np.empty(0, dtype=np.int64)
    outputs, pols = _port_maps(clicks, model.detectors)
    opposite = pols[d1] != pols[d2]
    bare_pair = (outputs[d1] == "r") & (outputs[d2] == "r")
    herald = opposite & ~bare_pair
    return np.unique(att[herald])


def _truncate_blocks(clicks: ClickRecords, heralds: np.ndarray,
                     block_size: int, n_attempts: int):
    """Drop attempts following a herald within each handshake block."""
    if heralds.size == 0:
        return clicks, heralds, n_attempts
    blocks = heralds // block_size
    first = {}
    for b, a in zip(blocks, heralds):
        if b not in first or a < first[b]:
            first[b] = a
    cutoff = np.full(math.ceil(n_attempts / block_size) + 1,
                     np.iinfo(np.int64).max, dtype=np.int64)
    for b, a in first.items():
        cutoff[b] = a
    keep = clicks.attempt <= cutoff[clicks.attempt // block_size]
    clicks = ClickRecords(attempt=clicks.attempt[keep],
                          detector=clicks.detector[keep], t=clicks.t[keep],
                          origin=clicks.origin[keep],
                          detector_names=clicks.detector_names,
                          n_attempts=clicks.n_attempts)
    skipped = 0
    for b, a in first.items():
        block_end = min((b + 1) * block_size, n_attempts)
        skipped += block_end - (a + 1)
    return clicks, np.array(sorted(first.values()), dtype=np.int64), \
        n_attempts - skipped


@dataclass(frozen=True)
class HomAnalysis:
    tau_centers: np.ndarray
    n_parallel_raw: np.ndarray
    n_perp_raw: np.ndarray
    n_parallel: np.ndarray  # background-subtracted, efficiency-corrected
    n_perp: np.ndarray
    n_parallel_var: np.ndarray  # Poisson variance of the corrected counts
    n_perp_var: np.ndarray
    t_list: np.ndarray
    t_effective: np.ndarray  # band actually covered by the included bins
    visibility: np.ndarray  # NaN where the denominator is empty

    def visibility_sigma(self, index: int) -> float:
        """Propagated one-sigma statistical error of visibility at one T."""
        delta = self.tau_centers[1] - self.tau_centers[0]
        sel = np.abs(self.tau_centers) <= self.t_list[index] - delta / 2 + 1e-15
        par = self.n_parallel[sel].sum()
        perp = self.n_perp[sel].sum()
        var_par = self.n_parallel_var[sel].sum()
        var_perp = self.n_perp_var[sel].sum()
        if perp <= 0:
            return np.inf
        return float(np.sqrt(var_par / perp ** 2
                             + (par / perp ** 2) ** 2 * var_perp))


def hom_analysis(clicks: ClickRecords, table: DetectorTable,
                 delta: float = 0.5e-6, t_list=(17.5e-6,),
                 window: tuple[float, float] = (5.5e-6, 23e-6)) -> HomAnalysis:
    """Interference visibility from click records.

    Coincidences are sorted by detector identity into same-polarization
    pairs and the two cross-output orthogonal pairs (the matching
    no-interference reference).  Expected photon-background coincidences
    are subtracted bin by bin, classes are corrected for relative detector
    acceptance, and V(T) sums the bins whose centers lie within
    ``T - delta/2``.
    """
    att, d1, d2, t1, t2 = _pairs_in_window(clicks, window)
    outputs, pols = _port_maps(clicks, table)
    acceptance = np.array([table.acceptance(n) for n in clicks.detector_names])
    rates = np.array([table[n].background_rate for n in clicks.detector_names])

    w0, w1 = window
    span = w1 - w0
    n_bins_half = int(np.floor(span / delta + 0.5))
    centers = np.arange(-n_bins_half, n_bins_half + 1) * delta
    edges = np.concatenate([centers - delta / 2, [centers[-1] + delta / 2]])

    # per-detector in-window clicks for the background expectation
    det_mask = (clicks.t >= w0) & (clicks.t <= w1)
    click_det = clicks.detector[det_mask]
    click_t = clicks.t[det_mask]
    n_att = max(clicks.n_attempts, 1)

    def expected_bg(det_u, det_r):
        """Expected background-involved pairs per tau bin for one class.

        Photon-at-one-detector with background-at-the-other, estimated from
        the observed click times (tau is signed as t_u - t_r), plus the tiny
        uniform background-background overlap.
        """
        out = np.zeros(centers.size)
        for a, b, sign in ((det_u, det_r, +1), (det_r, det_u, -1)):
            t_ph = click_t[click_det == a]
            if t_ph.size == 0:
                continue
            n_ph = max(t_ph.size - n_att * rates[a] * span, 0.0)
            for k, tau_k in enumerate(centers):
                partner = t_ph - sign * tau_k
                cov = float(np.mean((partner >= w0) & (partner <= w1)))
                out[k] += n_ph * rates[b] * delta * cov
        overlap = np.clip(span - np.abs(centers), 0.0, None)
        out += n_att * rates[det_u] * rates[det_r] * delta * overlap
        return out

    def class_hist(mask, tau):
        return np.histogram(tau[mask], bins=edges)[0].astype(float)

    pol1, pol2 = pols[d1], pols[d2]
    out1, out2_ = outputs[d1], outputs[d2]
    # tau = t(u-side click) - t(r-side click)
    tau_ur = np.where(out1 == "u", t1 - t2, t2 - t1)

    classes = {}
    for key, want_same_pol in (("parallel", True), ("perp", False)):
        total_raw = np.zeros(centers.size)
        total_corr = np.zeros(centers.size)
        total_var = np.zeros(centers.size)
        for pol_u, pol_r in ((("v", "v") if want_same_pol else ("v", "h")),
                             (("h", "h") if want_same_pol else ("h", "v"))):
            det_u = next(i for i, nm in enumerate(clicks.detector_names)
                         if outputs[i] == "u" and pols[i] == pol_u)
            det_r = next(i for i, nm in enumerate(clicks.detector_names)
                         if outputs[i] == "r" and pols[i] == pol_r)
            lo, hi = min(det_u, det_r), max(det_u, det_r)
            mask = (d1 == lo) & (d2 == hi)
            raw = class_hist(mask, tau_ur)
            bg = expected_bg(det_u, det_r)
            a_prod = acceptance[det_u] * acceptance[det_r]
            total_raw += raw
            total_corr += (raw - bg) / a_prod
            total_var += (raw + bg) / a_prod ** 2
        classes[key] = (total_raw, total_corr, total_var)

    n_par_raw, n_par, n_par_var = classes["parallel"]
    n_perp_raw, n_perp, n_perp_var = classes["perp"]

    t_list = np.asarray(t_list, dtype=float)
    vis = np.full(t_list.size, np.nan)
    t_eff = np.zeros(t_list.size)
    for i, t_win in enumerate(t_list):
        sel = np.abs(centers) <= t_win - delta / 2 + 1e-15
        if not np.any(sel):
            continue
        t_eff[i] = np.abs(centers[sel]).max() + delta / 2
        denom = n_perp[sel].sum()
        if denom > 0:
            vis[i] = 1.0 - n_par[sel].sum() / denom
    if np.all(np.isnan(vis)):
        raise UndefinedVisibilityError("no orthogonal coincidences in any window")
    return HomAnalysis(tau_centers=centers, n_parallel_raw=n_par_raw,
                       n_perp_raw=n_perp_raw, n_parallel=n_par,
                       n_perp=n_perp, n_parallel_var=n_par_var,
                       n_perp_var=n_perp_var, t_list=t_list,
                       t_effective=t_eff, visibility=vis)


# -- success metrics -------------------------------------------------------------

@dataclass(frozen=True)
class WallClockModel:
    """Wall-clock accounting for rate estimates.

    Block overhead fills the stated maximum sequence length (initialization
    plus handshake plus the full loop); each heralded block appends the
    qubit-measurement stage.
    """

    block_init: float = 3.49e-3
    handshake: float = 1e-5
    iteration: float = 420e-6
    measurement: float = 1.519e-3

    def total_time(self, log: AttemptLog) -> float:
        return (log.n_blocks * (self.block_init + self.handshake)
                + log.n_executed * self.iteration
                + log.herald_attempts.size * self.measurement)


@dataclass(frozen=True)
class SuccessMetrics:
    n_coincidences: int
    success_probability: float
    herald_rate: float
    wall_clock: float


def success_metrics(clicks: ClickRecords, log: AttemptLog,
                    table: DetectorTable,
                    window: tuple[float, float] = (5.5e-6, 23e-6),
                    wall_clock: WallClockModel | None = None) -> SuccessMetrics:
    """Coincidence count, per-attempt success probability, and herald rate."""
    wall_clock = wall_clock or WallClockModel()
    att, d1, d2, _, _ = _pairs_in_window(clicks, window)
    if att.size:
        outputs, pols = _port_maps(clicks, table)
        opposite = pols[d1] != pols[d2]
        bare_pair = (outputs[d1] == "r") & (outputs[d2] == "r")
        n_coinc = int(np.unique(att[opposite & ~bare_pair]).size)
    else:
        n_coinc = 0
    attempts = max(log.n_executed, 1)
    total = wall_clock.total_time(log)
    return SuccessMetrics(n_coincidences=n_coinc,
                          success_probability=n_coinc / attempts,
                          herald_rate=n_coinc / total if total > 0 else 0.0,
                          wall_clock=total)
