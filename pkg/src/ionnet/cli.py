"""Command-line interface: config ingestion, dispatch, figure-data emission.

Subcommands
-----------
envelope        jitter-averaged photon envelopes and scattering rate (CSV)
visibility      model interference visibility, three noise modes (CSV)
fidelity-model  predicted Bell-state fidelities versus coincidence window (CSV)
simulate        stochastic click records for a run of attempts (CSV)
analyze         coincidence histograms, measured V(T), success metrics
tomography      maximum-likelihood state reconstruction and uncertainties

All artifacts start with header lines recording the resolved-config hash and
the seed, so a fixed seed reproduces byte-identical outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dynamics, empirical, hilbert, netsim, pbsm, tomography
from .errors import ConfigError, IonnetError, PresetNotFoundError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_PRESET = 4
EXIT_RUNTIME = 5

_DEFAULT_CONFIG = {
    "node_a": {"preset": "nodeA"},
    "node_b": {"preset": "nodeB"},
    "detectors": {"preset": "detectors"},
    "jitter": {"k_max": 6, "span_factor": 3.0},
    "sequence": {},
    "t_sweep_us": {"start": 0.25, "stop": 17.5, "step": 0.25},
    "seed": 0,
    "integration": {"target_dt_ns": 0.4, "coarse_dt_us": 0.25},
    "analysis": {"bin_us": 0.5, "window_us": [5.5, 23.0]},
    "simulate": {"n_attempts": 1_000_000, "herald_mode": False,
                 "target_success_probability": 3960 / 13656928},
    "fidelity": {"f_ip_a": 0.938, "f_ip_b": 0.956, "phi": 0.0},
}


@dataclass
class RunConfig:
    """Resolved run configuration shared by every subcommand."""

    node_a: hilbert.NodeParams
    node_b: hilbert.NodeParams
    detectors: pbsm.DetectorTable
    ensemble_a: dynamics.JitterEnsemble
    sequence: netsim.SequenceConfig
    t_sweep: np.ndarray
    seed: int
    target_dt: float
    coarse_dt: float
    analysis_bin: float
    analysis_window: tuple
    simulate_options: dict
    fidelity_options: dict
    digest: str
    document: dict = field(repr=False, default_factory=dict)


# sections a user supplies wholesale rather than patching field by field
_REPLACE_SECTIONS = ("node_a", "node_b", "detectors")


def _merge(defaults, override, replace=()):
    out = dict(defaults)
    for key, value in override.items():
        if key in replace or not (isinstance(value, dict)
                                  and isinstance(out.get(key), dict)):
            out[key] = value
        else:
            out[key] = _merge(out[key], value)
    return out


def _node_from_section(section) -> hilbert.NodeParams:
    if not isinstance(section, dict):
        raise ConfigError("node section must be an object")
    if "preset" in section:
        doc = dict(hilbert.load_preset(section["preset"]))
        doc.update(section.get("overrides", {}))
    else:
        doc = section
    try:
        return hilbert.node_params_from_dict(doc)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad node parameters: {exc}") from exc


def load_config(path: str | None, seed_override: int | None = None) -> RunConfig:
    """Load, default-fill, validate, and hash a run configuration."""
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config root must be a JSON object")
    merged = _merge(_DEFAULT_CONFIG, doc, replace=_REPLACE_SECTIONS)
    if seed_override is not None:
        merged["seed"] = seed_override

    node_a = _node_from_section(merged["node_a"])
    node_b = _node_from_section(merged["node_b"])

    det_section = merged["detectors"]
    if "preset" in det_section:
        detectors = pbsm.DetectorTable.from_preset(det_section["preset"])
    else:
        try:
            detectors = pbsm.DetectorTable.from_dict(det_section)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad detector table: {exc}") from exc

    jitter = merged["jitter"]
    ensemble_a = dynamics.jitter_ensemble(node_a.gamma_clj,
                                          k_max=int(jitter["k_max"]),
                                          span_factor=float(jitter["span_factor"]))

    seq_over = merged["sequence"]
    seq_kwargs = {}
    for name in ("cooling_a", "pumping_a", "raman_a", "cooling_b",
                 "pumping_b", "raman_b", "iteration", "detection_span"):
        if f"{name}_us" in seq_over:
            seq_kwargs[name] = float(seq_over[f"{name}_us"]) * 1e-6
    if "max_iterations" in seq_over:
        seq_kwargs["max_iterations"] = int(seq_over["max_iterations"])
    for name in ("detection_window", "background_window"):
        if f"{name}_us" in seq_over:
            lo, hi = seq_over[f"{name}_us"]
            seq_kwargs[name] = (float(lo) * 1e-6, float(hi) * 1e-6)
    try:
        sequence = netsim.SequenceConfig(**seq_kwargs)
    except ValueError as exc:
        raise ConfigError(f"bad sequence config: {exc}") from exc

    sweep = merged["t_sweep_us"]
    t_sweep = np.arange(float(sweep["start"]),
                        float(sweep["stop"]) + 1e-9,
                        float(sweep["step"])) * 1e-6
    if t_sweep.size == 0:
        raise ConfigError("empty coincidence-window sweep")

    integ = merged["integration"]
    analysis = merged["analysis"]
    digest = hashlib.sha256(
        json.dumps(merged, sort_keys=True).encode()).hexdigest()[:16]
    return RunConfig(
        node_a=node_a, node_b=node_b, detectors=detectors,
        ensemble_a=ensemble_a, sequence=sequence, t_sweep=t_sweep,
        seed=int(merged["seed"]),
        target_dt=float(integ["target_dt_ns"]) * 1e-9,
        coarse_dt=float(integ["coarse_dt_us"]) * 1e-6,
        analysis_bin=float(analysis["bin_us"]) * 1e-6,
        analysis_window=tuple(float(x) * 1e-6 for x in analysis["window_us"]),
        simulate_options=dict(merged["simulate"]),
        fidelity_options=dict(merged["fidelity"]),
        digest=digest, document=merged)


def _headers(cfg: RunConfig, extra=()):
    return [f"config_sha256={cfg.digest}", f"seed={cfg.seed}", *extra]


def _out_path(args, name: str) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out / name


# -- subcommand implementations -----------------------------------------------

def _cmd_envelope(cfg: RunConfig, args) -> int:
    nodes = {"a": cfg.node_a, "b": cfg.node_b}
    wanted = ("a", "b") if args.node == "both" else (args.node,)
    for key in wanted:
        params = nodes[key]
        grid = dynamics.TimeGrid.for_node(params, target_dt=cfg.target_dt)
        ensemble = cfg.ensemble_a if key == "a" else \
            dynamics.jitter_ensemble(params.gamma_clj)
        p_v, p_h, p_s, _ = dynamics.averaged_curves(params, grid, ensemble)
        path = _out_path(args, f"envelope_node{key.upper()}.csv")
        dynamics.write_envelope_csv(path, grid, p_v, p_h, p_s,
                                    header_lines=_headers(cfg))
        print(f"wrote {path}")
    return EXIT_OK


def _cmd_visibility(cfg: RunConfig, args) -> int:
    curves = {}
    for mode in pbsm.MODES:
        curves[mode] = pbsm.model_visibility(
            cfg.node_a, cfg.node_b, cfg.t_sweep, mode=mode,
            ensemble_a=cfg.ensemble_a, window=cfg.analysis_window,
            coarse_dt=cfg.coarse_dt, target_dt=cfg.target_dt)
    path = _out_path(args, "visibility.csv")
    pbsm.write_visibility_csv(path, cfg.t_sweep, curves,
                              header_lines=_headers(cfg))
    print(f"wrote {path}")
    return EXIT_OK


def _read_visibility_csv(path):
    t_vals, v_vals = [], []
    with open(path) as fh:
        header = None
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                continue
            parts = line.split(",")
            t_vals.append(float(parts[0]) * 1e-6)
            v_vals.append(float(parts[1]))
    return np.array(t_vals), np.array(v_vals)


def _cmd_fidelity_model(cfg: RunConfig, args) -> int:
    t_list = cfg.t_sweep
    if args.visibility_csv:
        t_list, vis = _read_visibility_csv(args.visibility_csv)
    else:
        curve = pbsm.model_visibility(
            cfg.node_a, cfg.node_b, t_list, mode="full",
            ensemble_a=cfg.ensemble_a, window=cfg.analysis_window,
            coarse_dt=cfg.coarse_dt, target_dt=cfg.target_dt)
        vis = curve.visibility
    opts = cfg.fidelity_options
    span = cfg.analysis_window[1] - cfg.analysis_window[0]
    curves = {}
    for label, sign in (("plus", +1), ("minus", -1)):
        for variant, dephase in (("full", True), ("nodephase", False)):
            curves[f"F_{label}_{variant}"] = empirical.model_fidelity_curve(
                t_list, vis, cfg.detectors, opts["f_ip_a"], opts["f_ip_b"],
                sign, phi=opts.get("phi", 0.0), include_dephasing=dephase,
                window_span=span)
    path = _out_path(args, "fidelity_model.csv")
    empirical.write_fidelity_csv(path, t_list, curves,
                                 header_lines=_headers(cfg))
    print(f"wrote {path}")
    return EXIT_OK


def _detection_model(cfg: RunConfig) -> netsim.DetectionModel:
    model = netsim.build_detection_model(
        cfg.node_a, cfg.node_b, cfg.detectors, cfg.sequence, cfg.ensemble_a,
        coarse_dt=cfg.coarse_dt, target_dt=cfg.target_dt)
    target = cfg.simulate_options.get("target_success_probability")
    if target:
        model = netsim.calibrate_to_success_probability(model, float(target))
    return model


def _cmd_simulate(cfg: RunConfig, args) -> int:
    opts = cfg.simulate_options
    n_attempts = int(args.attempts or opts["n_attempts"])
    model = _detection_model(cfg)
    clicks, log = netsim.simulate_attempts(
        cfg.sequence, model, n_attempts, seed=cfg.seed,
        herald_mode=bool(opts.get("herald_mode", False)))
    path = _out_path(args, "clicks.csv")
    clicks.to_csv(path, header_lines=_headers(
        cfg, extra=[f"n_executed={log.n_executed}",
                    f"herald_mode={log.herald_mode}"]))
    metrics = netsim.success_metrics(clicks, log, cfg.detectors,
                                     window=cfg.analysis_window)
    print(f"wrote {path}")
    print(f"attempts executed: {log.n_executed}")
    print(f"coincidences: {metrics.n_coincidences}")
    print(f"success probability: {metrics.success_probability:.4e}")
    print(f"herald rate: {metrics.herald_rate:.3f} /s")
    return EXIT_OK


def _cmd_analyze(cfg: RunConfig, args) -> int:
    clicks = netsim.ClickRecords.from_csv(args.clicks)
    hom = netsim.hom_analysis(clicks, cfg.detectors, delta=cfg.analysis_bin,
                              t_list=cfg.t_sweep, window=cfg.analysis_window)
    hist_path = _out_path(args, "hom_histogram.csv")
    with open(hist_path, "w", newline="") as fh:
        for line in _headers(cfg):
            fh.write(f"# {line}\n")
        fh.write("tau_us,n_parallel_raw,n_perp_raw,n_parallel,n_perp\n")
        for i, tau in enumerate(hom.tau_centers):
            fh.write(f"{tau * 1e6:.3f},{hom.n_parallel_raw[i]:.0f},"
                     f"{hom.n_perp_raw[i]:.0f},{hom.n_parallel[i]:.3f},"
                     f"{hom.n_perp[i]:.3f}\n")
    vis_path = _out_path(args, "visibility_data.csv")
    with open(vis_path, "w", newline="") as fh:
        for line in _headers(cfg):
            fh.write(f"# {line}\n")
        fh.write("T_us,T_effective_us,V\n")
        for i, t_win in enumerate(hom.t_list):
            fh.write(f"{t_win * 1e6:.3f},{hom.t_effective[i] * 1e6:.3f},"
                     f"{hom.visibility[i]:.6f}\n")
    log = netsim.AttemptLog(n_requested=clicks.n_attempts,
                            n_executed=clicks.n_attempts,
                            block_size=cfg.sequence.max_iterations,
                            herald_mode=False,
                            herald_attempts=np.empty(0, dtype=np.int64))
    metrics = netsim.success_metrics(clicks, log, cfg.detectors,
                                     window=cfg.analysis_window)
    print(f"wrote {hist_path}")
    print(f"wrote {vis_path}")
    print(f"coincidences: {metrics.n_coincidences}")
    print(f"success probability: {metrics.success_probability:.4e}")
    print(f"herald rate: {metrics.herald_rate:.3f} /s")
    return EXIT_OK


def _cmd_tomography(cfg: RunConfig, args) -> int:
    rng_seed = cfg.seed
    if args.counts:
        try:
            doc = json.loads(Path(args.counts).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"counts file not found: {args.counts}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"counts file is not valid JSON: {exc}") from exc
        counts = tomography.counts_from_json(doc)
    elif args.synthetic:
        opts = cfg.fidelity_options
        t_win = args.t_window_us * 1e-6
        curve = pbsm.model_visibility(
            cfg.node_a, cfg.node_b, [t_win], mode="full",
            ensemble_a=cfg.ensemble_a, window=cfg.analysis_window,
            coarse_dt=cfg.coarse_dt, target_dt=cfg.target_dt)
        span = cfg.analysis_window[1] - cfg.analysis_window[0]
        budget = empirical.herald_budget(cfg.detectors, args.sign)
        budget = budget.scaled_background(
            empirical.background_window_fraction(t_win, span))
        rho = empirical.rho_with_background(budget, args.sign, opts["phi"])
        rho = empirical.apply_dephasing(rho, curve.visibility[0])
        rho = empirical.depolarizing_correction(rho, opts["f_ip_a"],
                                                opts["f_ip_b"])
        counts = tomography.sample_counts(rho, args.synthetic,
                                          np.random.default_rng(rng_seed))
    else:
        raise ConfigError("tomography needs --counts or --synthetic")

    rho = tomography.mle_reconstruct(counts)
    if args.optimize_phase:
        phi, _ = tomography.optimize_phase(rho, args.sign)
    else:
        phi = args.phi if args.phi is not None else \
            cfg.fidelity_options.get("phi", 0.0)
    estimate = tomography.resample_uncertainty(
        counts, (args.sign, phi), m_resamples=args.resamples, seed=cfg.seed)
    doc = tomography.reconstruction_to_json(rho, estimate)
    doc["config_sha256"] = cfg.digest
    doc["seed"] = cfg.seed
    doc["counts"] = tomography.counts_to_json(counts)
    path = _out_path(args, "tomography.json")
    path.write_text(json.dumps(doc, indent=2) + "\n")
    print(f"wrote {path}")
    print(f"fidelity: {estimate.value:.4f} "
          f"(+{estimate.upper:.4f}/-{estimate.lower:.4f}) at phi={phi:.4f}")
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ionnet",
        description="Two-node trapped-ion network simulator and analysis")
    parser.add_argument("--config", help="run-configuration JSON")
    parser.add_argument("--seed", type=int, help="master seed (overrides config)")
    parser.add_argument("--out", default=".", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p_env = sub.add_parser("envelope", help="photon envelopes and scattering")
    p_env.add_argument("--node", choices=("a", "b", "both"), default="both")
    p_env.add_argument("--preset", help="node preset shortcut for node A")

    sub.add_parser("visibility", help="model V(T), three noise modes")

    p_fid = sub.add_parser("fidelity-model", help="model fidelity curves")
    p_fid.add_argument("--visibility-csv",
                       help="use measured V(T) from a CSV (T_us,V)")

    p_sim = sub.add_parser("simulate", help="generate click records")
    p_sim.add_argument("--attempts", type=int, help="number of attempts")

    p_ana = sub.add_parser("analyze", help="analyze click records")
    p_ana.add_argument("--clicks", required=True, help="click CSV path")

    p_tom = sub.add_parser("tomography", help="state reconstruction")
    p_tom.add_argument("--counts", help="counts JSON path")
    p_tom.add_argument("--synthetic", type=int,
                       help="generate synthetic counts with this many shots "
                            "per setting from the empirical-model state")
    p_tom.add_argument("--sign", type=int, choices=(1, -1), default=1)
    p_tom.add_argument("--phi", type=float)
    p_tom.add_argument("--optimize-phase", action="store_true")
    p_tom.add_argument("--resamples", type=int, default=200)
    p_tom.add_argument("--t-window-us", type=float, default=1.0)
    return parser


_COMMANDS = {
    "envelope": _cmd_envelope,
    "visibility": _cmd_visibility,
    "fidelity-model": _cmd_fidelity_model,
    "simulate": _cmd_simulate,
    "analyze": _cmd_analyze,
    "tomography": _cmd_tomography,
}


def run_command(argv) -> int:
    """Parse arguments, execute one subcommand, and return an exit status."""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed)
        if getattr(args, "preset", None):
            doc = dict(hilbert.load_preset(args.preset))
            cfg.node_a = hilbert.node_params_from_dict(doc)
        return _COMMANDS[args.command](cfg, args)
    except PresetNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRESET
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IonnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main(argv=None) -> int:
    return run_command(argv if argv is not None else sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
