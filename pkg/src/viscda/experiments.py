"""Viscosity sweeps behind the error-floor figure and the one-shot estimate table."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .assimilation import OBS_COLUMNS, AssimilationConfig, ErrorSeries, detect_floor, floor_scaling, run_assimilation
from .io import SnapshotTrajectory, read_csv, read_forcing, read_observations, write_csv
from .recovery import DegenerateDenominator, estimate_instant

log = logging.getLogger(__name__)

FLOOR_HEADER = ("nu2", "rel_error", "floor_l2", "floor_rel", "t_floor", "floor_ratio", "error_ratio",
                "scaling_factor")
TABLE1_HEADER = ("nu2", "ih_w_sq", "denom", "nu_tilde", "abs_err", "improvement_ratio")


def sweep_values(nu1: float, nu2_values: Sequence[float] = (), rel_errors: Sequence[float] = ()) -> list[float]:
    """Explicit ``nu2_values`` if given, else ``nu1 (1 + e)`` for each relative error."""
    if nu2_values:
        return [float(x) for x in nu2_values]
    return [nu1 * (1.0 + e) for e in rel_errors]


def series_name(i: int, nu2: float) -> str:
    return f"errors_{i:02d}_nu2_{nu2!r}.csv"


def _member(job: tuple[AssimilationConfig, str, bool, str | None]) -> ErrorSeries:
    cfg, ref_dir, with_truth, out_path = job
    ref = Path(ref_dir)
    obs = read_observations(ref / "observations.nnob")
    forcing = read_forcing(ref / "forcing.nnse")
    truth = SnapshotTrajectory(ref / "snapshots") if with_truth else None
    series = run_assimilation(cfg, obs, forcing, truth)
    if out_path is not None:
        series.to_csv(out_path)
    return series


def run_sweep(ref_dir, nu2_list: Sequence[float], base: AssimilationConfig, out_dir=None,
              workers: int = 1, with_truth: bool = True) -> list[ErrorSeries]:
    """One assimilation per nu2; each member writes its own CSV under ``out_dir``."""
    jobs = []
    for i, nu2 in enumerate(nu2_list):
        path = None if out_dir is None else str(Path(out_dir) / series_name(i, nu2))
        jobs.append((replace(base, nu2=nu2), str(ref_dir), with_truth, path))
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            return list(pool.map(_member, jobs))
    return [_member(j) for j in jobs]


def floor_rows(series: Sequence[ErrorSeries], nu1: float):
    """Rows of the floor summary, one per sweep member in sweep order."""
    prev = None
    for s in series:
        rel = (s.nu2 - nu1) / nu1
        key = "l2_err" if s.has_truth else "ih_err"
        ok = ~np.isnan(s[key])
        floor, t_floor = detect_floor(s["t"][ok], s[key][ok])
        floor_rel = s.floor("l2_rel") if "l2_rel" in s.columns else None
        floor_ratio = err_ratio = None
        if prev is not None and prev[0] > 0 and abs(prev[1]) > 0:
            floor_ratio = floor / prev[0]
            err_ratio = abs(rel) / abs(prev[1])
        scaling = floor_scaling(1 / nu1, 1 / s.nu2)
        yield s.nu2, rel, floor, floor_rel, t_floor, floor_ratio, err_ratio, scaling
        prev = (floor, rel)


def experiment_figure2(ref_dir, nu1: float, nu2_list: Sequence[float], base: AssimilationConfig,
                       out_dir, workers: int = 1) -> list[ErrorSeries]:
    """Error series for every nu2 plus ``floors.csv`` summarizing their floors."""
    out_dir = Path(out_dir)
    series = run_sweep(ref_dir, nu2_list, base, out_dir, workers)
    write_csv(out_dir / "floors.csv", FLOOR_HEADER, floor_rows(series, nu1))
    return series


def table1_rows(series: Sequence[ErrorSeries], nu1: float | None, mu: float, t_eval: float):
    """Instantaneous estimate from each member's observables at ``t_eval``.

    The improvement ratio |nu_tilde - nu1| / |nu2 - nu1| is left empty when
    nu2 = nu1, and so is the estimate itself when the denominator is degenerate.
    """
    for s in series:
        ih_sq = s.value_at("ih_err_sq", t_eval)
        denom = s.value_at("denom", t_eval)
        try:
            nu_tilde = estimate_instant(s.nu2, mu, ih_sq, denom)
        except DegenerateDenominator:
            nu_tilde = math.nan
        abs_err = ratio = None
        if nu1 is not None and not math.isnan(nu_tilde):
            abs_err = abs(nu_tilde - nu1)
            if s.nu2 != nu1:
                ratio = abs_err / abs(s.nu2 - nu1)
        yield s.nu2, ih_sq, denom, nu_tilde, abs_err, ratio


def experiment_table1(series: Sequence[ErrorSeries], nu1: float | None, mu: float, t_eval: float = 24.0,
                      path=None) -> list[tuple]:
    rows = list(table1_rows(series, nu1, mu, t_eval))
    if path is not None:
        write_csv(path, TABLE1_HEADER, rows)
    return rows


def load_sweep(directory) -> list[ErrorSeries]:
    """Read back the member CSVs written by :func:`run_sweep`."""
    out = []
    for path in sorted(Path(directory).glob("errors_*_nu2_*.csv")):
        header, rows = read_csv(path)
        nu2 = float(path.stem.split("_nu2_")[1])
        cols = {h: np.array([np.nan if r[h] is None else r[h] for r in rows], dtype=float) for h in header}
        out.append(ErrorSeries(nu2, cols, tuple(header) != OBS_COLUMNS))
    if not out:
        raise FileNotFoundError(f"no sweep CSVs in {directory}")
    return out
