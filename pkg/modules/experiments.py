"""
Experiments – single solves, parameter sweeps and convergence traces.

Every (sweep value, realization) pair gets its own seed derived from the
master seed, so results do not depend on worker count or scheduling order.
All schemes of one pair share the channel draw and the analog initialization.
Rows are sorted before they are written, and with timing disabled two runs of
the same config and seed produce identical files.
"""

import hashlib
import logging
import math
import time
from dataclasses import dataclass, field
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from modules.baselines import SCHEMES, SchemeSpec, solve_scheme
from modules.channel_model import FAR, NEAR, ChannelSet, UserGeometry, focusing_gain, generate_channels, sample_scenario
from modules.exceptions import ConfigError
from modules.hybrid_driver import SolveResult, write_trace
from modules.mm_subproblem import dump_diagnostics
from modules.persistence import format_value, write_csv_atomic
from modules.scenario import KEY_TO_ATTR, ScenarioConfig

logger = logging.getLogger(__name__)

RESULT_HEADER = [
    "sweep_param", "sweep_value", "scheme", "arch", "field", "realization", "seed",
    "max_min_rate_bpshz", "sum_rate_bpshz", "violation", "outer_iters", "certified", "wall_ms", "status",
]
SUMMARY_HEADER = [
    "sweep_param", "sweep_value", "scheme", "n_ok",
    "mean_max_min_rate_bpshz", "stderr_max_min_rate_bpshz", "mean_sum_rate_bpshz", "stderr_sum_rate_bpshz",
]
REPORT_HEADER = ["k", "m", "S_c", "I_c", "S_p", "I_p", "sinr_c", "sinr_p", "R_c", "R_p", "C"]
GAINS_HEADER = ["k", "m", "frequency_hz", "gain"]


# ─── Seeds and scenarios ──────────────────────────────────────────────────────

def derive_seed(master: int, param: str, value_index: int, realization: int) -> int:
    """64-bit seed from SeedSequence(master, spawn_key=(sha256(param)[:8], value_index, realization))."""
    tag = int.from_bytes(hashlib.sha256(param.encode("utf-8")).digest()[:8], "big")
    seq = np.random.SeedSequence(master, spawn_key=(tag, value_index, realization))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def build_scenario(cfg: ScenarioConfig, seed: int, *, with_far: bool = False
                   ) -> Tuple[List[UserGeometry], ChannelSet, Optional[ChannelSet]]:
    users = sample_scenario(cfg, seed)
    geom, freqs = cfg.array_geometry, cfg.frequencies
    H_near = generate_channels(geom, users, freqs, NEAR, nlos_gain=cfg.nlos_gain)
    H_far = generate_channels(geom, users, freqs, FAR, nlos_gain=cfg.nlos_gain) if with_far else None
    return users, H_near, H_far


# ─── Sweeps ───────────────────────────────────────────────────────────────────

@dataclass
class SweepSpec:
    param: str
    values: Sequence[Any]
    schemes: Sequence[str] = tuple(SCHEMES)
    overrides: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.param not in KEY_TO_ATTR:
            raise ConfigError(f"Unknown sweep parameter '{self.param}'.", key=self.param)
        if self.param in self.overrides:
            raise ConfigError(f"'{self.param}' is swept and cannot also be fixed.", key=self.param)
        if not self.values:
            raise ConfigError("A sweep needs at least one value.", key=self.param)
        unknown = [s for s in self.schemes if s not in SCHEMES]
        if unknown:
            raise ConfigError(f"Unknown scheme(s) {unknown}; choose from {list(SCHEMES)}.")


@dataclass(frozen=True)
class _Task:
    cfg: ScenarioConfig
    param: str
    value: Any
    value_index: int
    realization: int
    schemes: Tuple[str, ...]
    far_scoring: str
    timing: bool


@dataclass
class SweepOutcome:
    rows_path: Path
    summary_path: Path
    rows: List[Tuple]
    failed: int


def _result_row(param, value, name: str, spec: SchemeSpec, realization: int, seed: int,
                result: Optional[SolveResult], wall_ms: float, status: str) -> Tuple:
    if result is None:
        metrics = (math.nan, math.nan, math.nan, 0, False)
    else:
        metrics = (result.max_min_rate, result.sum_rate, result.violation, result.outer_iters, result.certified)
    return (param, format_value(value), name, spec.label, spec.field, realization, seed, *metrics,
            round(wall_ms, 3), status)


def run_realization(task: _Task) -> List[Tuple[Tuple[int, int, int], Tuple]]:
    """Solve every scheme on one channel draw; failures become rows with status != ok."""
    seed = derive_seed(task.cfg.seed, task.param, task.value_index, task.realization)
    rows = []
    try:
        cfg = task.cfg.with_keys({task.param: task.value})
        need_far = any(SCHEMES[s].field == FAR for s in task.schemes)
        _, H_near, H_far = build_scenario(cfg, seed, with_far=need_far)
    except (ConfigError, ValueError) as e:
        logger.error("Scenario %s=%s realization %d rejected: %s", task.param, task.value, task.realization, e)
        for order, name in enumerate(task.schemes):
            rows.append(((task.value_index, task.realization, order),
                         _result_row(task.param, task.value, name, SCHEMES[name], task.realization, seed,
                                     None, 0, f"error:{type(e).__name__}")))
        return rows

    # full-digital schemes run last so they can start from the hybrid designs of this draw
    done: List[SolveResult] = []
    ordered = sorted(enumerate(task.schemes), key=lambda item: SCHEMES[item[1]].architecture == "fdb")
    for order, name in ordered:
        spec = SCHEMES[name]
        started = time.perf_counter()
        try:
            result = solve_scheme(spec, cfg, H_near, H_far, rng_seed=seed, far_scoring=task.far_scoring,
                                  warm_starts=done)
            status = "ok"
            done.append(result)
        except Exception as e:  # noqa: BLE001 – one failed scheme must not stop the sweep
            logger.exception("Scheme %s failed on %s=%s realization %d", name, task.param, task.value,
                             task.realization)
            result, status = None, f"error:{type(e).__name__}"
        wall_ms = (time.perf_counter() - started) * 1000 if task.timing else 0
        rows.append(((task.value_index, task.realization, order),
                     _result_row(task.param, task.value, name, spec, task.realization, seed, result, wall_ms,
                                 status)))
    return rows


def summarize(rows: Sequence[Tuple]) -> List[Tuple]:
    """Mean and standard error of the rate columns per (sweep value, scheme), over ok rows."""
    groups: Dict[Tuple[str, str, str], List[Tuple[float, float]]] = {}
    order: List[Tuple[str, str, str]] = []
    for row in rows:
        key = (row[0], row[1], row[2])
        if key not in groups:
            groups[key] = []
            order.append(key)
        if row[-1] == "ok":
            groups[key].append((row[7], row[8]))

    def mean_stderr(values: np.ndarray) -> Tuple[float, float]:
        if values.size == 0:
            return math.nan, math.nan
        stderr = float(np.std(values, ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
        return float(np.mean(values)), stderr

    out = []
    for key in order:
        data = np.array(groups[key], dtype=float).reshape(-1, 2)
        mm_mean, mm_err = mean_stderr(data[:, 0])
        sr_mean, sr_err = mean_stderr(data[:, 1])
        out.append((*key, data.shape[0], mm_mean, mm_err, sr_mean, sr_err))
    return out


def run_sweep(cfg: ScenarioConfig, sweep: SweepSpec, out_dir: str | Path, *, jobs: int = 1,
              timing: bool = True, far_scoring: str = NEAR) -> SweepOutcome:
    out_dir = Path(out_dir)
    base = cfg.with_keys(sweep.overrides) if sweep.overrides else cfg
    tasks = [
        _Task(base, sweep.param, value, vi, r, tuple(sweep.schemes), far_scoring, timing)
        for vi, value in enumerate(sweep.values)
        for r in range(base.realizations)
    ]
    logger.info("Sweep %s over %s: %d realizations × %d schemes, %d worker(s).",
                sweep.param, list(sweep.values), base.realizations, len(sweep.schemes), jobs)

    keyed = []
    progress = tqdm(total=len(tasks), desc=f"sweep {sweep.param}", leave=False)
    if jobs > 1:
        with Pool(jobs) as pool:
            for rows in pool.imap_unordered(run_realization, tasks):
                keyed.extend(rows)
                progress.update(1)
    else:
        for task in tasks:
            keyed.extend(run_realization(task))
            progress.update(1)
    progress.close()

    rows = [row for _, row in sorted(keyed, key=lambda item: item[0])]
    failed = sum(1 for row in rows if row[-1] != "ok")
    rows_path = write_csv_atomic(out_dir / f"sweep_{sweep.param}.csv", RESULT_HEADER, rows)
    summary_path = write_csv_atomic(out_dir / f"sweep_{sweep.param}_summary.csv", SUMMARY_HEADER, summarize(rows))
    if failed:
        logger.error("Sweep finished with %d failed row(s).", failed)
    else:
        logger.info("Sweep finished: %d rows → %s", len(rows), rows_path)
    return SweepOutcome(rows_path, summary_path, rows, failed)


# ─── Single solve / convergence ───────────────────────────────────────────────

def report_rows(result: SolveResult) -> List[Tuple]:
    rep = result.report
    K, M = rep.signal_common.shape
    common = result.alloc.common
    return [
        (k, m, rep.signal_common[k, m], rep.interference_common[k, m], rep.signal_private[k, m],
         rep.interference_private[k, m], rep.sinr_common[k, m], rep.sinr_private[k, m],
         rep.rate_common[k, m], rep.rate_private[k, m], common[k, m])
        for k in range(K) for m in range(M)
    ]


def gain_rows(cfg: ScenarioConfig, users: Sequence[UserGeometry], result: SolveResult) -> List[Tuple]:
    """Focusing gain of each private beam towards its own user's LoS point, per subcarrier."""
    freqs = cfg.frequencies
    rows = []
    for k, user in enumerate(users):
        gains = focusing_gain(cfg.array_geometry, user.los, freqs, result.precoders.precoders[:, :, k + 1])
        rows.extend((k, m, float(freqs[m]), float(g)) for m, g in enumerate(gains))
    return rows


def run_solve(cfg: ScenarioConfig, spec: SchemeSpec, out_dir: str | Path, *, timing: bool = True,
              far_scoring: str = NEAR, diagnostics: bool = False) -> SolveResult:
    """
    One scenario, one scheme: writes result.csv, report.csv, gains.csv and trace.csv,
    plus mm_diagnostics.csv (per MM iteration objective and KKT residuals) when asked.
    """
    out_dir = Path(out_dir)
    seed = derive_seed(cfg.seed, "solve", 0, 0)
    users, H_near, H_far = build_scenario(cfg, seed, with_far=spec.field == FAR)
    started = time.perf_counter()
    result = solve_scheme(spec, cfg, H_near, H_far, rng_seed=seed, far_scoring=far_scoring)
    wall_ms = (time.perf_counter() - started) * 1000 if timing else 0

    name = next((n for n, s in SCHEMES.items() if s == spec), f"{spec.architecture}-{spec.access}-{spec.field}")
    write_csv_atomic(out_dir / "result.csv", RESULT_HEADER,
                     [_result_row("", "", name, spec, 0, seed, result, wall_ms, "ok")])
    write_csv_atomic(out_dir / "report.csv", REPORT_HEADER, report_rows(result))
    write_csv_atomic(out_dir / "gains.csv", GAINS_HEADER, gain_rows(cfg, users, result))
    if result.penalty_state is not None:
        write_trace(result.penalty_state, out_dir / "trace.csv", timing=timing)
    if diagnostics:
        dump_diagnostics(result.diagnostics, out_dir / "mm_diagnostics.csv")
    logger.info("Solve %s: max-min rate %.4f bits/s/Hz (certified=%s)", name, result.max_min_rate, result.certified)
    return result


def run_convergence(cfg: ScenarioConfig, out_dir: str | Path, *, scheme: str = "fhb",
                    timing: bool = True) -> SolveResult:
    """Writes trace.csv into out_dir: (outer_iter, rho, violation, R_r, wall_ms) of one penalty solve."""
    spec = SCHEMES[scheme]
    if spec.architecture == "fdb":
        raise ValueError("The full-digital scheme has no penalty loop to trace.")
    seed = derive_seed(cfg.seed, "converge", 0, 0)
    _, H_near, H_far = build_scenario(cfg, seed, with_far=spec.field == FAR)
    result = solve_scheme(spec, cfg, H_near, H_far, rng_seed=seed)
    path = write_trace(result.penalty_state, Path(out_dir) / "trace.csv", timing=timing)
    logger.info("Convergence trace: %d outer iterations → %s", result.outer_iters, path)
    return result
