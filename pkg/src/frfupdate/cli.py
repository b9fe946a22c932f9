"""Command-line entry point.

Subcommands wire a YAML scenario configuration to the pipeline:

- ``measure``    synthesize the measurement CSV at the true parameters
- ``update``     run the adaptive updating loop (exit 0 converged, 2 not)
- ``correlate``  Monte Carlo parameter/response correlation CSV
- ``compare``    adaptive vs single-shot conventional baseline report

Every command is a pure function of (config, seed) to output bytes;
wall-clock timings appear only in log lines.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import yaml

from . import analysis, fem, updating
from .errors import (Measurement, read_measurement_csv, synthesize_measurement,
                     write_measurement_csv)
from .fem import FrequencyGrid, ParameterPoint
from .optim import PsoConfig, SaoConfig

log = logging.getLogger(__name__)

__all__ = ["ScenarioConfig", "load_scenario", "main"]


@dataclass(frozen=True)
class ScenarioConfig:
    """Parsed scenario: model source, truth, grid spec, loop and I/O settings."""

    raw: dict
    base_dir: Path
    model: fem.StructuralModel
    true_theta: ParameterPoint
    grid_spec: dict
    measurement_path: Path
    noise_std: float
    update: updating.UpdateConfig
    conventional: dict
    correlation: dict
    seeds: tuple
    output_dir: Path


def _section(raw, name, default=None):
    value = raw.get(name, {} if default is None else default)
    if value is None:
        value = {}
    if not isinstance(value, dict):
        raise ValueError(f"config section '{name}' must be a mapping")
    return value


def _build_model(raw, base_dir):
    spec = _section(raw, "model")
    kind = spec.get("kind", "chain")
    sensors = spec.get("sensor_dofs", "all")
    if kind == "chain":
        sensor_dofs = None if sensors in ("all", None) else tuple(int(s) for s in sensors)
        return fem.generate_chain_model(
            n_masses=int(spec.get("n_masses", 6)),
            m_segments=int(spec.get("n_segments", 6)),
            mass_per_node=float(spec.get("mass_per_node", 1.0)),
            stiffness_per_spring=float(spec.get("stiffness_per_spring", 4e7)),
            damping_a=float(spec.get("damping_a", 1e-2)),
            damping_b=float(spec.get("damping_b", 1e-4)),
            sensor_dofs=sensor_dofs,
        )
    if kind == "bundle":
        path = spec.get("path")
        if not path:
            raise ValueError("model.kind 'bundle' requires model.path")
        return fem.load_matrix_bundle(base_dir / path)
    raise ValueError(f"unknown model.kind {kind!r} (expected 'chain' or 'bundle')")


def _build_true_theta(raw, model):
    spec = _section(raw, "true_parameters")
    alpha = spec.get("alpha")
    if alpha is None:
        return None
    alpha = np.asarray(alpha, dtype=float)
    gamma = spec.get("gamma")
    gamma = np.zeros(model.n_segments) if gamma is None else np.asarray(gamma, dtype=float)
    return ParameterPoint(alpha=alpha, gamma=gamma)


def _build_update_config(raw, seed_override=None, threads=None):
    upd = _section(raw, "update")
    opt = _section(raw, "optimizer")
    sao_spec = _section(opt, "sao")
    pso_spec = _section(opt, "pso")
    sao = SaoConfig(
        initial_temperature=float(sao_spec.get("initial_temperature", 100.0)),
        target_temperature=float(sao_spec.get("target_temperature", 3.0)),
        descent_slope=float(sao_spec.get("descent_slope", 0.8)),
        iterations_per_temperature=int(sao_spec.get("iterations_per_temperature", 400)),
        initial_point=tuple(sao_spec.get("initial_point", (1.0, 1.0))),
        proposal_scale=float(sao_spec.get("proposal_scale", 0.1)),
    )
    pso = PsoConfig(
        swarm_size=int(pso_spec.get("swarm_size", 100)),
        max_evaluations=int(pso_spec.get("max_evaluations", 10_000)),
        inertia=float(pso_spec.get("inertia", 0.7298)),
        cognitive=float(pso_spec.get("cognitive", 1.49618)),
        social=float(pso_spec.get("social", 1.49618)),
    )
    seed = int(raw.get("seed", 0)) if seed_override is None else int(seed_override)
    box = upd.get("initial_box", (-1.0, 1.0))
    cfg = updating.UpdateConfig(
        q_initial=int(upd.get("q_initial", 20)),
        s_per_iter=int(upd.get("s_per_iter", 20)),
        z_elite=int(upd.get("z_elite", 20)),
        w_surface=int(upd.get("w_surface", 10_000)),
        epsilon_threshold=float(upd.get("epsilon_threshold", 0.01)),
        max_iterations=int(upd.get("max_iterations", 25)),
        initial_box=tuple(np.asarray(box, dtype=float).tolist()) if np.asarray(box).ndim == 1
        else np.asarray(box, dtype=float),
        min_candidate_separation=float(upd.get("min_candidate_separation", 0.05)),
        optimizer_choice=str(opt.get("choice", "sao")),
        seed=seed,
        update_mass=bool(upd.get("update_mass", False)),
        sao=sao,
        pso=pso,
        sigma_f_bounds=tuple(opt.get("sigma_f_bounds", (0.0, 10.0))),
        lengthscale_upper_initial=float(opt.get("lengthscale_upper_initial", 10.0)),
        lengthscale_upper_factor=float(opt.get("lengthscale_upper_factor", 10.0)),
        sigma_n_sq=float(opt.get("sigma_n_sq", 0.0)),
        threads=1 if threads is None else threads,
    )
    return cfg


def load_scenario(config_path, seed_override=None, threads=None,
                  output_override=None) -> ScenarioConfig:
    """Load and validate a YAML scenario configuration."""
    config_path = Path(config_path)
    with open(config_path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"{config_path}: config must be a YAML mapping")
    base_dir = config_path.resolve().parent
    model = _build_model(raw, base_dir)
    true_theta = _build_true_theta(raw, model)
    meas_spec = _section(raw, "measurement")
    meas_path = base_dir / meas_spec.get("path", "measurement.csv")
    out_spec = _section(raw, "output")
    output_dir = Path(output_override) if output_override else base_dir / out_spec.get("directory", "out")
    seeds = raw.get("seeds", [0, 1, 2, 3, 4])
    return ScenarioConfig(
        raw=raw,
        base_dir=base_dir,
        model=model,
        true_theta=true_theta,
        grid_spec=_section(raw, "grid", {"kind": "auto"}),
        measurement_path=meas_path,
        noise_std=float(meas_spec.get("noise_std", 0.0)),
        update=_build_update_config(raw, seed_override, threads),
        conventional=_section(raw, "conventional"),
        correlation=_section(raw, "correlation"),
        seeds=tuple(int(s) for s in seeds),
        output_dir=output_dir,
    )


def resolve_grid(scn: ScenarioConfig) -> FrequencyGrid:
    """Explicit grid from config, or auto points around the first resonances.

    Auto mode brackets each of the first ``n_resonances`` natural
    frequencies of the true-parameter system with ``points_per_resonance``
    points at relative offsets ``step_fraction * j``.
    """
    spec = scn.grid_spec
    kind = spec.get("kind", "auto")
    if kind == "explicit":
        return FrequencyGrid(freqs_hz=np.asarray(spec["freqs_hz"], dtype=float))
    if kind != "auto":
        raise ValueError(f"unknown grid.kind {kind!r}")
    if scn.true_theta is None:
        raise ValueError("auto grid requires true_parameters (synthetic mode)")
    n_res = int(spec.get("n_resonances", 2))
    ppr = int(spec.get("points_per_resonance", 6))
    step = float(spec.get("step_fraction", 0.03))
    sys = fem.apply_parameters(scn.model, scn.true_theta)
    freqs = fem.natural_frequencies(sys, n_res)
    offsets = np.arange(ppr) - (ppr + 1) // 2 + 1  # e.g. -3..2 for 6 points
    pts = np.sort(np.concatenate([fk * (1.0 + step * offsets) for fk in freqs]))
    return FrequencyGrid(freqs_hz=pts)


def _config_echo(scn: ScenarioConfig) -> dict:
    return scn.raw


def cmd_measure(scn: ScenarioConfig) -> int:
    """Write the synthetic measurement CSV at the true parameters."""
    if scn.true_theta is None:
        raise ValueError("measure requires true_parameters.alpha in the config")
    grid = resolve_grid(scn)
    meas = synthesize_measurement(scn.model, scn.true_theta, grid,
                                  noise_std=scn.noise_std, seed=scn.update.seed)
    scn.measurement_path.parent.mkdir(parents=True, exist_ok=True)
    echo = "config: " + json.dumps(_config_echo(scn), sort_keys=True)
    write_measurement_csv(meas, scn.measurement_path, header_comment=echo)
    log.info("wrote %s (%d sensors x %d frequencies)", scn.measurement_path,
             meas.n_sensors, grid.n_points)
    return 0


def _load_measurement(scn: ScenarioConfig) -> Measurement:
    if not scn.measurement_path.exists():
        raise FileNotFoundError(
            f"measurement file {scn.measurement_path} not found; run 'measure' first"
        )
    meas = read_measurement_csv(scn.measurement_path)
    if tuple(meas.sensor_dofs) != tuple(scn.model.sensor_dofs):
        raise ValueError("measurement sensor DOFs do not match the model")
    return meas


def cmd_update(scn: ScenarioConfig) -> int:
    """Run the adaptive loop; write history CSV and result JSON."""
    meas = _load_measurement(scn)
    result = updating.run_update(scn.model, meas, meas.grid, scn.update)
    scn.output_dir.mkdir(parents=True, exist_ok=True)
    echo = _config_echo(scn)
    updating.write_history_csv(result.history, scn.output_dir / "history.csv", echo)
    updating.write_result_json(result, scn.output_dir / "result.json", echo,
                               extra={"seed": scn.update.seed,
                                      "optimizer": scn.update.optimizer_choice})
    log.info("final overall error %.4g%% after %d iterations (%d FE evaluations)",
             100.0 * result.final_epsilon, result.iterations, result.fe_evaluations)
    return 0 if result.converged else 2


def cmd_correlate(scn: ScenarioConfig) -> int:
    """Write the Monte Carlo correlation CSV."""
    if scn.measurement_path.exists():
        grid = read_measurement_csv(scn.measurement_path).grid
    else:
        grid = resolve_grid(scn)
    n_samples = int(scn.correlation.get("n_samples", 10_000))
    cmap = analysis.correlation_map(
        scn.model, grid, n_samples=n_samples, seed=scn.update.seed,
        update_mass=scn.update.update_mass, threads=scn.update.threads,
    )
    scn.output_dir.mkdir(parents=True, exist_ok=True)
    analysis.write_correlation_csv(cmap, grid, scn.model.sensor_dofs,
                                   scn.output_dir / "correlation.csv",
                                   config_echo=_config_echo(scn))
    log.info("wrote %s (%d coefficients)", scn.output_dir / "correlation.csv",
             cmap.values.size)
    return 0


def cmd_compare(scn: ScenarioConfig) -> int:
    """Adaptive vs conventional single-shot baseline over the config seeds."""
    meas = _load_measurement(scn)
    n_train = int(scn.conventional.get("n_train", 300))
    n_surface = int(scn.conventional.get("n_surface", 10_000))
    budget_iters = max(1, (n_train - scn.update.q_initial) // scn.update.s_per_iter)
    adaptive_cfg = replace(scn.update,
                           max_iterations=min(scn.update.max_iterations, budget_iters))
    report = {"adaptive": [], "conventional": [], "seeds": list(scn.seeds),
              "n_train": n_train, "n_surface": n_surface}
    for seed in scn.seeds:
        res_a = updating.run_update(scn.model, meas, meas.grid,
                                    replace(adaptive_cfg, seed=seed))
        res_c = updating.run_conventional(scn.model, meas, meas.grid,
                                          n_train=n_train, n_surface=n_surface,
                                          cfg=replace(scn.update, seed=seed))
        for tag, res in (("adaptive", res_a), ("conventional", res_c)):
            report[tag].append({
                "seed": seed,
                "final_epsilon": res.final_epsilon,
                "converged": bool(res.converged),
                "fe_evaluations": res.fe_evaluations,
                "iterations": res.iterations,
                "identified_alpha": res.identified_theta.alpha.tolist(),
            })
        log.info("seed %d: adaptive %.4g%% (%d FE) vs conventional %.4g%% (%d FE)",
                 seed, 100 * res_a.final_epsilon, res_a.fe_evaluations,
                 100 * res_c.final_epsilon, res_c.fe_evaluations)
    report["median_adaptive_epsilon"] = float(np.median(
        [r["final_epsilon"] for r in report["adaptive"]]))
    report["median_conventional_epsilon"] = float(np.median(
        [r["final_epsilon"] for r in report["conventional"]]))
    report["config"] = _config_echo(scn)
    scn.output_dir.mkdir(parents=True, exist_ok=True)
    with open(scn.output_dir / "compare.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


_COMMANDS = {
    "measure": cmd_measure,
    "update": cmd_update,
    "correlate": cmd_correlate,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="frfupdate",
        description="Frequency-response based model updating with an adaptive "
                    "multi-response GP surrogate.",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="YAML scenario configuration")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--threads", type=int, default=1,
                        help="FE evaluation threads (0 = all cores)")
    parser.add_argument("--output-dir", default=None, help="override output directory")
    parser.add_argument("--quiet", action="store_true", help="only warnings and errors")
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    threads = os.cpu_count() if args.threads == 0 else args.threads
    try:
        scn = load_scenario(args.config, seed_override=args.seed,
                            threads=threads, output_override=args.output_dir)
        return _COMMANDS[args.command](scn)
    except Exception as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
