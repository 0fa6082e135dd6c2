"""Command-line entry point: ``viscda <subcommand> --config <file> ...``.

Exit codes: 0 success, 2 config or input error, 3 numerical blow-up,
4 degenerate recovery, 5 recovery ran out of data, 6 Algorithm 1 stalled
above its last update error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy.fft

from .assimilation import AssimilationConfig, CutoffMismatchError, ObservationGapError, run_assimilation
from .config import ConfigError, RunConfig, RunManifest, config_from_manifest, load_manifest, parse_config
from .experiments import experiment_figure2, experiment_table1, load_sweep, run_sweep, sweep_values
from .forcing import ForcingSpec, generate_forcing
from .grid import Grid2D
from .io import (FormatError, SnapshotTrajectory, file_sha256, read_forcing, read_observations,
                 write_csv, write_forcing)
from .recovery import CONVERGED, DEGENERATE, EXHAUSTED, STALLED, RecoveryConfig, algorithm1, algorithm2
from .sensitivity import SensitivityConfig, convergence_study
from .solver import BlowUpError, SolverConfig, integrate, run_reference, steps_in
from .spectral import energy_spectrum

log = logging.getLogger("viscda")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BLOWUP = 3
EXIT_DEGENERATE = 4
EXIT_EXHAUSTED = 5
EXIT_STALLED = 6
RECOVERY_EXIT = {CONVERGED: EXIT_OK, DEGENERATE: EXIT_DEGENERATE, EXHAUSTED: EXIT_EXHAUSTED,
                 STALLED: EXIT_STALLED}


def _need_dir(path, what: str) -> Path:
    p = Path(path).resolve()
    if not p.is_dir():
        raise ConfigError(f"{what} directory {p} does not exist")
    return p


def _reference_nu(ref_dir: Path) -> float | None:
    manifest = ref_dir / "manifest.json"
    if manifest.exists():
        return float(load_manifest(manifest)["config"]["nu"])
    return None


def _forcing_spec(cfg: RunConfig) -> ForcingSpec:
    return ForcingSpec(k_low=cfg["k_low"], k_high=cfg["k_high"], seed=cfg["seed"], target_l2=cfg["forcing_norm"])


def cmd_reference(cfg: RunConfig, inputs: dict, man: RunManifest) -> int:
    grid = Grid2D(cfg["n"])
    forcing = Path(cfg["forcing_file"]) if cfg["forcing_file"] else _forcing_spec(cfg)
    scfg = SolverConfig(nu=cfg["nu"], dt=cfg["dt"], t_end=cfg["t_end"], grid=grid, forcing=forcing,
                        snapshot_interval=cfg["snapshot_interval"], observation_cutoff=cfg["observation_cutoff"],
                        observation_interval=cfg["observation_interval"],
                        observation_start=cfg["observation_start"], stepper=cfg["stepper"])
    run_reference(scfg, cfg.out_dir, run_id=cfg.digest()[:16])
    man.forcing_sha256 = file_sha256(cfg.out_dir / "forcing.nnse")
    return EXIT_OK


def _obs_inputs(inputs: dict, man: RunManifest):
    ref = _need_dir(inputs["obs"], "observation")
    truth = _need_dir(inputs["truth"], "truth") if inputs.get("truth") else None
    obs_path = ref / "observations.nnob"
    man.inputs.update({"obs": str(ref), "observations_sha256": file_sha256(obs_path)})
    if truth is not None:
        man.inputs["truth"] = str(truth)
    man.forcing_sha256 = file_sha256(ref / "forcing.nnse")
    return read_observations(obs_path), read_forcing(ref / "forcing.nnse"), truth


def _assimilation_config(cfg: RunConfig, nu2: float) -> AssimilationConfig:
    return AssimilationConfig(nu2=nu2, mu=cfg["mu"], h=cfg["h"], dt=cfg["dt"], t_start=cfg["t_start"],
                              t_end=cfg["t_end"], output_interval=cfg["output_interval"],
                              max_obs_gap=cfg.get("max_obs_gap", 1.0), stepper=cfg["stepper"])


def cmd_assimilate(cfg: RunConfig, inputs: dict, man: RunManifest) -> int:
    obs, forcing, truth = _obs_inputs(inputs, man)
    acfg = _assimilation_config(cfg, cfg["nu2"])
    series = run_assimilation(acfg, obs, forcing, SnapshotTrajectory(truth / "snapshots") if truth else None)
    series.to_csv(cfg.out_dir / "errors.csv")
    return EXIT_OK


def cmd_recover(cfg: RunConfig, inputs: dict, man: RunManifest) -> int:
    obs, forcing, truth = _obs_inputs(inputs, man)
    nu1 = cfg["nu1"] if cfg["nu1"] is not None else (_reference_nu(truth) if truth else None)
    rcfg = RecoveryConfig(mu=cfg["mu"], solver_dt=cfg["dt"], t_start=cfg["t_start"], t_end=cfg["t_end"],
                          stepper=cfg["stepper"], guard=cfg["guard"], max_obs_gap=cfg["max_obs_gap"])
    algorithm = int(inputs["algorithm"])
    man.inputs["algorithm"] = str(algorithm)
    if algorithm == 1:
        state = algorithm1(obs, forcing, cfg["nu2_init"], rcfg, dt=cfg["check_interval"],
                           epsilon=cfg["epsilon"], delta=cfg["delta"])
    else:
        state = algorithm2(obs, forcing, cfg["nu2_init"], rcfg, wait=cfg["wait"], window=cfg["window"],
                           epsilon=cfg["epsilon"])
    state.write(cfg.out_dir / "history.csv", cfg.out_dir / "table.csv", nu1)
    man.notes.append(f"status {state.status}; nu2 = {state.nu2!r} after {state.iteration} updates, "
                     f"t = {state.final_t!r}")
    log.info("recovery %s: nu2 = %.17g", state.status, state.nu2)
    return RECOVERY_EXIT[state.status]


def cmd_sensitivity(cfg: RunConfig, inputs: dict, man: RunManifest) -> int:
    out = cfg.out_dir
    nu1, dt = cfg["nu1"], cfg["dt"]
    u0 = None
    if cfg["reference_dir"]:
        ref = _need_dir(cfg["reference_dir"], "reference")
        forcing = read_forcing(ref / "forcing.nnse")
        u0 = SnapshotTrajectory(ref / "snapshots").at(cfg["t_start"])
    elif cfg["forcing_file"]:
        forcing = read_forcing(Path(cfg["forcing_file"]))
    else:
        spec = _forcing_spec(cfg)
        forcing = generate_forcing(spec, Grid2D(cfg["n"]))
        write_forcing(out / "forcing.nnse", forcing, spec)
    if u0 is None:
        grid = forcing.grid
        nspin = steps_in(cfg["t_start"], dt, "t_start")
        log.info("spinning up %d steps with nu1 = %g", nspin, nu1)
        u0 = integrate(grid, np.asarray(forcing.coeffs), np.zeros((2,) + grid.shape, dtype=complex), nu1, dt, nspin)
    nu2 = sweep_values(nu1, cfg["nu2_values"], cfg["nu2_rel_errors"])
    scfg = SensitivityConfig(nu1, tuple(nu2), dt=dt, t_start=cfg["t_start"], t_end=cfg["t_end"], mu=cfg["mu"],
                             h=cfg["h"], nonlinear=cfg["nonlinear"], source_time=cfg["source_time"])
    report = convergence_study(scfg, forcing, u0)
    report.write(out)
    man.notes.extend(report.notes)
    man.notes.append(f"order e_l2H (nse) = {report.order():.6g}")
    if report.nudged:
        man.notes.append(f"order e_l2V (nudged) = {report.order('nudged', 'e_l2V'):.6g}")
    return EXIT_OK


def cmd_spectrum(cfg: RunConfig, inputs: dict, man: RunManifest) -> int:
    ref = _need_dir(cfg["reference_dir"], "reference")
    traj = SnapshotTrajectory(ref / "snapshots")
    t_to = cfg["t_to"] if cfg["t_to"] is not None else np.inf
    idx = [i for i, t in enumerate(traj.times) if cfg["t_from"] - 1e-9 <= t <= t_to + 1e-9]
    if len(idx) < 2:
        raise ConfigError("fewer than 2 snapshots in [t_from, t_to]", ("t_from", "t_to"))
    r, s = energy_spectrum([traj.load(i) for i in idx], [traj.times[i] for i in idx])
    write_csv(cfg.out_dir / "spectrum.csv", ("r", "S"), zip(r, s))
    return EXIT_OK


def _sweep_setup(cfg: RunConfig, man: RunManifest):
    ref = _need_dir(cfg["reference_dir"], "reference")
    nu1 = cfg["nu1"] if cfg["nu1"] is not None else _reference_nu(ref)
    if nu1 is None:
        raise ConfigError("nu1 unknown: set nu1 or run against a reference directory with a manifest", ("nu1",))
    man.forcing_sha256 = file_sha256(ref / "forcing.nnse")
    man.inputs["reference_dir"] = str(ref)
    return ref, nu1, sweep_values(nu1, cfg["nu2_values"], cfg["nu2_rel_errors"])


def cmd_figure2(cfg: RunConfig, inputs: dict, man: RunManifest) -> int:
    ref, nu1, nu2 = _sweep_setup(cfg, man)
    experiment_figure2(ref, nu1, nu2, _assimilation_config(cfg, nu2[0]), cfg.out_dir,
                       workers=inputs.get("threads") or cfg["workers"])
    return EXIT_OK


def cmd_table1(cfg: RunConfig, inputs: dict, man: RunManifest) -> int:
    if cfg["sweep_dir"]:
        series = load_sweep(_need_dir(cfg["sweep_dir"], "sweep"))
        nu1 = cfg["nu1"] if cfg["nu1"] is not None else _reference_nu(Path(cfg["reference_dir"]))
    else:
        ref, nu1, nu2 = _sweep_setup(cfg, man)
        base = _assimilation_config(cfg, nu2[0])
        base = replace(base, t_end=cfg["t_eval"])
        series = run_sweep(ref, nu2, base, None, workers=inputs.get("threads") or cfg["workers"], with_truth=False)
    experiment_table1(series, nu1, cfg["mu"], cfg["t_eval"], cfg.out_dir / "table1.csv")
    return EXIT_OK


HANDLERS = {
    "reference": cmd_reference,
    "assimilate": cmd_assimilate,
    "recover": cmd_recover,
    "sensitivity": cmd_sensitivity,
    "spectrum": cmd_spectrum,
    "figure2": cmd_figure2,
    "table1": cmd_table1,
}


def execute(cfg: RunConfig, inputs: dict | None = None, argv: list[str] | None = None) -> int:
    """Run one resolved config, always finishing with a manifest in its output directory."""
    inputs = dict(inputs or {})
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(cfg.to_text())
    man = RunManifest(cfg, argv=list(argv or []))
    for w in cfg.warnings:
        log.warning(w)
    status = EXIT_CONFIG
    try:
        status = HANDLERS[cfg.command](cfg, inputs, man)
    except (ConfigError, CutoffMismatchError, ObservationGapError, FormatError, FileNotFoundError) as exc:
        log.error("%s", exc)
        man.notes.append(f"error: {exc}")
        status = EXIT_CONFIG
    except BlowUpError as exc:
        log.error("%s", exc)
        man.notes.append(f"error: {exc}")
        status = EXIT_BLOWUP
    finally:
        man.finish(status, out)
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="viscda", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, help="override the forcing seed of the config")
    p.add_argument("--threads", type=int, help="FFT worker threads and sweep parallelism")
    p.add_argument("--quiet", action="store_true", help="log warnings and errors only")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(name, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", required=True, type=Path)
        return sp

    with_config("reference", "integrate the reference flow and record observations")
    sp = with_config("assimilate", "nudge toward recorded observations with a fixed nu2")
    sp.add_argument("--obs", required=True, type=Path, help="reference run directory")
    sp.add_argument("--truth", type=Path, help="reference run directory for full-field errors")
    sp = with_config("recover", "recover the viscosity with Algorithm 1 or 2")
    sp.add_argument("--obs", required=True, type=Path)
    sp.add_argument("--algorithm", required=True, type=int, choices=(1, 2))
    sp.add_argument("--truth", type=Path, help="reference run directory; supplies nu1 for error columns")
    with_config("sensitivity", "difference-quotient convergence study")
    with_config("spectrum", "time-averaged shell energy spectrum of a reference run")
    sp = sub.add_parser("experiment", help="nu2 sweeps for the floor summary or the estimate table")
    sp.add_argument("which", choices=("figure2", "table1"))
    sp.add_argument("--config", required=True, type=Path)
    sp = sub.add_parser("replay", help="re-run a past manifest into a new output directory")
    sp.add_argument("--manifest", required=True, type=Path)
    sp.add_argument("--out", required=True, type=Path)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    inputs: dict = {"threads": args.threads}
    try:
        if args.command == "replay":
            man = load_manifest(args.manifest)
            cfg = config_from_manifest(man, str(args.out))
            inputs.update({k: v for k, v in man["inputs"].items() if k in ("obs", "truth", "algorithm")})
        else:
            command = args.which if args.command == "experiment" else args.command
            cfg = parse_config(args.config, command, overrides={"seed": args.seed})
            for key in ("obs", "truth", "algorithm"):
                if getattr(args, key, None) is not None:
                    inputs[key] = str(getattr(args, key))
            for key in ("obs", "truth"):
                if key in inputs:
                    _need_dir(inputs[key], key)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    with scipy.fft.set_workers(args.threads or 1):
        return execute(cfg, inputs, argv)


if __name__ == "__main__":
    sys.exit(main())
