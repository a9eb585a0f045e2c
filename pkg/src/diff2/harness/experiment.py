"""Seeded experiments: tuning, final curves and per-seed summaries.

Every seed ``s`` owns the stream ``RngStream(root_seed).child("seed", s)``
with children ``split``, ``partition``, ``init`` and ``run``. All
algorithms and all tuning attempts of a seed share these streams, so the
comparison between algorithms is paired and DP-GD reproduces DIFF2-GD with
``T = 1`` exactly.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..accountant import PrivacyBudget, calibrate_diff2_bvrlsgd, calibrate_diff2_gd
from ..core import Diff2Config, RunOutput, run_diff2, run_dp_gd
from ..data import CsvSchema, RawDataset, fit_and_apply_normalization, load_csv, train_test_split
from ..federation import Federation, partition_iid
from ..models import ModelSpec, factored_gradients, init_params, losses
from ..numerics import RngStream
from .tuning import FAST_GRID, PAPER_GRID, Attempt, PatienceMonitor, TuningFailure, grid_product, tune

log = logging.getLogger(__name__)

ALGORITHMS = ("gd", "dp-gd", "diff2-gd", "diff2-bvr-lsgd")
CRITERIA = ("train_loss", "train_sq_grad_norm", "test_loss")
# test loss is reported for the train-loss winner
TUNED_CRITERIA = ("train_loss", "train_sq_grad_norm")

__all__ = [
    "ALGORITHMS",
    "CRITERIA",
    "Evaluator",
    "ExperimentConfig",
    "RoundRecord",
    "RunSummary",
    "SeedData",
    "prepare_seed",
    "run_algorithm",
    "run_experiment",
]


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str
    task: str = "regression"
    algos: tuple[str, ...] = ("dp-gd", "diff2-gd")
    eps: float = 3.0
    delta: float = 1e-5
    rounds: int = 2000
    clients: int = 10
    seeds: int = 5
    root_seed: int = 0
    tune: bool = True
    fast: bool = False
    eta: Optional[float] = None
    c1: float = 1.0
    c2: float = 1.0
    c3: Optional[float] = None  # defaults to c2
    restart_interval: Optional[int] = None
    local_steps: int = 10
    batch: int = 40
    u: float = 1.25
    u1: float = 3.0
    u2: float = 3.0
    hidden_units: int = 10
    stride: int = 20
    patience: int = 5
    target: Optional[str] = None
    drop: tuple[str, ...] = ()
    jobs: int = 1

    def __post_init__(self):
        unknown = [a for a in self.algos if a not in ALGORITHMS]
        if unknown:
            raise ValueError(f"unknown algorithms {unknown}; choose from {ALGORITHMS}")
        if not self.algos:
            raise ValueError("no algorithms selected")
        if self.seeds < 1 or self.rounds < 1 or self.clients < 1:
            raise ValueError("seeds, rounds and clients must be positive")
        if not self.tune and self.eta is None:
            raise ValueError("either tune or give a learning rate")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["algos"], d["drop"] = list(self.algos), list(self.drop)
        return d

    @property
    def budget(self) -> PrivacyBudget:
        return PrivacyBudget(self.eps, self.delta)


@dataclass(frozen=True)
class RoundRecord:
    round: int
    train_loss: float
    train_sq_grad_norm: float
    test_loss: float
    wall_time: float = field(default=0.0, compare=False)  # excluded from equality and CSVs


@dataclass
class RunSummary:
    algo: str
    seed: int
    hyperparameters: dict = field(default_factory=dict)  # criterion -> params
    minima: dict = field(default_factory=dict)  # criterion -> min over rounds
    curves: dict = field(default_factory=dict)  # criterion -> list[RoundRecord]
    noise_plan: Optional[dict] = None
    comm: Optional[dict] = None
    attempts: int = 0
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict:
        return {
            "algo": self.algo,
            "seed": self.seed,
            "hyperparameters": self.hyperparameters,
            "minima": self.minima,
            "noise_plan": self.noise_plan,
            "comm": self.comm,
            "attempts": self.attempts,
            "error": self.error,
        }


class Evaluator:
    """Train objective ``f = (1/P) sum_p f_p`` and the plain test mean."""

    def __init__(self, spec: ModelSpec, federation: Federation, test: RawDataset):
        self.spec = spec
        self.X = np.concatenate([s.X for s in federation.shards])
        self.y = np.concatenate([s.y for s in federation.shards])
        self.w = np.concatenate([np.full(s.n, 1.0 / (s.n * federation.P)) for s in federation.shards])
        self.test = test

    def train_loss(self, x: np.ndarray) -> float:
        return float(self.w @ losses(self.spec, x, self.X, self.y))

    def train_sq_grad_norm(self, x: np.ndarray) -> float:
        g = factored_gradients(self.spec, x, self.X, self.y).weighted_sum(self.w)
        return float(g @ g)

    def test_loss(self, x: np.ndarray) -> float:
        if len(self.test) == 0:
            return math.nan
        return float(np.mean(losses(self.spec, x, self.test.X, self.test.y)))

    def record(self, r: int, x: np.ndarray, wall_time: float = 0.0) -> RoundRecord:
        if not np.all(np.isfinite(x)):
            return RoundRecord(r, math.nan, math.nan, math.nan, wall_time)
        return RoundRecord(r, self.train_loss(x), self.train_sq_grad_norm(x), self.test_loss(x), wall_time)


@dataclass
class SeedData:
    seed: int
    stream: RngStream
    federation: Federation
    test: RawDataset
    spec: ModelSpec
    x0: np.ndarray
    evaluator: Evaluator


def load_dataset(cfg: ExperimentConfig) -> RawDataset:
    return load_csv(cfg.dataset, CsvSchema(target=cfg.target, drop=cfg.drop, task=cfg.task))


def prepare_seed(cfg: ExperimentConfig, raw: RawDataset, seed: int) -> SeedData:
    stream = RngStream(cfg.root_seed).child("seed", seed)
    train, test = train_test_split(raw, stream.child("split"))
    train, test, _ = fit_and_apply_normalization(train, test)
    federation = partition_iid(train.X, train.y, cfg.clients, stream.child("partition"))
    n_classes = int(raw.y.max()) + 1 if cfg.task == "classification" else 1
    spec = ModelSpec.for_task(cfg.task, train.X.shape[1], max(n_classes, 2), cfg.hidden_units)
    x0 = init_params(spec, stream.child("init"))
    return SeedData(seed, stream, federation, test, spec, x0, Evaluator(spec, federation, test))


def _grid_points(cfg: ExperimentConfig, algo: str) -> tuple[list[dict], list[float]]:
    """Grid points in tie-break order (radii ascending, T ascending)."""
    R = cfg.rounds
    if not cfg.tune:
        T = cfg.restart_interval or max(1, round(0.01 * R))
        point = {"gd": {}, "dp-gd": {"C1": cfg.c1}}.get(algo, {"C1": cfg.c1, "C2": cfg.c2, "T": T})
        return [point], [cfg.eta]
    grid = FAST_GRID if cfg.fast else PAPER_GRID
    etas = grid.etas_descending()
    if algo == "gd":
        return [{}], etas
    if algo == "dp-gd":
        return grid_product(C1=grid.radii), etas
    Ts = [cfg.restart_interval] if cfg.restart_interval else grid.restart_intervals(R)
    return grid_product(C1=grid.radii, C2=grid.radii, T=Ts), etas


def _plan(cfg: ExperimentConfig, algo: str, params: dict, n_min: int):
    if algo == "dp-gd":
        return calibrate_diff2_gd(cfg.budget, cfg.rounds, 1, n_min, cfg.clients, limit_one=True)
    if algo == "diff2-gd":
        return calibrate_diff2_gd(cfg.budget, cfg.rounds, params["T"], n_min, cfg.clients, u=cfg.u)
    if algo == "diff2-bvr-lsgd":
        return calibrate_diff2_bvrlsgd(
            cfg.budget, cfg.rounds, params["T"], cfg.local_steps, cfg.clients, n_min, cfg.batch,
            u1=cfg.u1, u2=cfg.u2,
        )
    return None


def _execute(cfg: ExperimentConfig, algo: str, params: dict, eta: float, data: SeedData, plan, observer) -> RunOutput:
    run_stream = data.stream.child("run")
    fed, spec, x0 = data.federation, data.spec, data.x0
    if algo == "gd":
        config = Diff2Config(cfg.rounds, 1, eta, math.inf)
        return run_diff2(config, fed, spec, x0, run_stream, observer)
    if algo == "dp-gd":
        return run_dp_gd(cfg.rounds, eta, params["C1"], plan.sigma1, fed, spec, x0, run_stream, observer)
    sigma2 = plan.sigma2 or 0.0
    if algo == "diff2-gd":
        config = Diff2Config(cfg.rounds, params["T"], eta, params["C1"], params["C2"], plan.sigma1, sigma2)
    else:
        config = Diff2Config(
            cfg.rounds, params["T"], eta, params["C1"], params["C2"], plan.sigma1, sigma2,
            routine="bvr_lsgd", C3=cfg.c3 if cfg.c3 is not None else params["C2"], sigma3=plan.sigma3,
            K=cfg.local_steps, b=cfg.batch,
        )
    return run_diff2(config, fed, spec, x0, run_stream, observer)


def run_algorithm(cfg: ExperimentConfig, algo: str, data: SeedData) -> RunSummary:
    """Tune (or run once) and compute the per-round curves of the winners."""
    summary = RunSummary(algo, data.seed)
    points, etas = _grid_points(cfg, algo)
    n_min = data.federation.n_min
    plans = {}
    feasible_points = []
    for p in points:
        plan = _plan(cfg, algo, p, n_min)
        if plan is not None and not plan.feasible:
            log.warning("%s %s: noise plan infeasible: %s", algo, p, "; ".join(plan.reasons))
            continue
        plans[_key(p)] = plan
        feasible_points.append(p)
    if not feasible_points:
        raise ValueError(f"{algo}: no grid point has a feasible noise plan")
    ev = data.evaluator

    def runner(params: dict, eta: float, monitor: PatienceMonitor) -> Attempt:
        attempt = Attempt(params, eta, completed=False, checkpoints={c: [] for c in TUNED_CRITERIA})
        stamps: list[float] = []
        start = time.perf_counter()

        def observer(r: int, x: np.ndarray) -> bool:
            stamps.append(time.perf_counter() - start)
            if r % cfg.stride and r != cfg.rounds:
                return False
            loss = ev.train_loss(x)
            attempt.checkpoints["train_loss"].append((r, loss))
            attempt.checkpoints["train_sq_grad_norm"].append((r, ev.train_sq_grad_norm(x)))
            if r % cfg.stride:
                return not math.isfinite(loss)
            return monitor.update(loss)

        # diverging learning rates overflow on purpose; divergence is detected explicitly
        with np.errstate(over="ignore", invalid="ignore"):
            out = _execute(cfg, algo, params, eta, data, plans[_key(params)], observer)
        attempt.completed = out.completed
        attempt.stopped_at = out.stopped_at if out.stopped_at is not None else out.diverged_at
        if out.diverged_at is not None:
            attempt.reason = f"diverged at round {out.diverged_at}"
        elif out.stopped_at is not None:
            attempt.reason = f"abandoned at round {out.stopped_at}"
        if attempt.completed:
            attempt.payload = (out, stamps)
        return attempt

    result = tune(feasible_points, etas, runner, TUNED_CRITERIA, cfg.patience if cfg.tune else None)
    summary.attempts = len(result.attempts)
    curves_by_attempt = {}
    for criterion in CRITERIA:
        winner = result.winners["train_loss" if criterion == "test_loss" else criterion]
        if id(winner) not in curves_by_attempt:
            out, stamps = winner.payload
            curves_by_attempt[id(winner)] = [
                ev.record(r, x, stamps[r] if r < len(stamps) else 0.0) for r, x in enumerate(out.trajectory)
            ]
        curve = curves_by_attempt[id(winner)]
        summary.curves[criterion] = curve
        summary.hyperparameters[criterion] = {**winner.params, "eta": winner.eta}
        summary.minima[criterion] = float(min(getattr(rec, criterion) for rec in curve))
    best = result.winners["train_loss"]
    plan = plans[_key(best.params)]
    summary.noise_plan = plan.to_dict() if plan is not None else None
    summary.comm = best.payload[0].comm.to_dict()
    return summary


def _key(params: dict) -> tuple:
    return tuple(sorted(params.items()))


def _run_seed(cfg: ExperimentConfig, raw: RawDataset, seed: int) -> list[RunSummary]:
    data = prepare_seed(cfg, raw, seed)
    summaries = []
    for algo in cfg.algos:
        t0 = time.perf_counter()
        try:
            summary = run_algorithm(cfg, algo, data)
        except (TuningFailure, ValueError, FloatingPointError) as exc:
            log.error("seed %d, %s failed: %s", seed, algo, exc)
            summary = RunSummary(algo, seed, error=str(exc))
        log.info("seed %d %s done in %.1fs", seed, algo, time.perf_counter() - t0)
        summaries.append(summary)
    return summaries


def run_experiment(cfg: ExperimentConfig, raw: Optional[RawDataset] = None) -> list[RunSummary]:
    """All algorithms on seeds ``1..cfg.seeds``; failures stay per seed.

    With ``cfg.jobs > 1`` seeds run in worker processes; results are
    identical to the serial schedule.
    """
    raw = raw if raw is not None else load_dataset(cfg)
    seeds = list(range(1, cfg.seeds + 1))
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            per_seed = list(pool.map(_run_seed, [cfg] * len(seeds), [raw] * len(seeds), seeds))
    else:
        per_seed = [_run_seed(cfg, raw, s) for s in seeds]
    return [s for group in per_seed for s in group]
