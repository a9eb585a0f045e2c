"""Grid search with learning-rate patience.

For every grid point (clipping radii, restart interval) learning rates are
tried from largest to smallest. Train loss is checked every ``stride``
rounds; a rate is abandoned when the loss is non-finite or when the
patience counter reaches ``patience``. The counter increases when the loss
exceeds ``1.05 x`` the best loss of the current run and resets when a new
best is reached. The first rate that completes all rounds ends the search
at that grid point.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

__all__ = [
    "FAST_GRID",
    "PAPER_GRID",
    "PatienceMonitor",
    "TuningFailure",
    "TuningGrid",
    "TuningResult",
    "tune",
]


class TuningFailure(RuntimeError):
    """Every learning rate was abandoned at every grid point."""


@dataclass(frozen=True)
class TuningGrid:
    etas: tuple[float, ...]
    radii: tuple[float, ...]
    restart_fractions: tuple[float, ...]

    def __post_init__(self):
        if not (self.etas and self.radii and self.restart_fractions):
            raise ValueError("tuning grids must be nonempty")

    def restart_intervals(self, R: int) -> list[int]:
        """``T = round(f R)`` clamped to ``[1, R]``, deduplicated, ascending."""
        values = sorted({min(R, max(1, round(f * R))) for f in self.restart_fractions})
        return values

    def etas_descending(self) -> list[float]:
        return sorted(self.etas, reverse=True)


PAPER_GRID = TuningGrid(
    etas=tuple(0.5**i for i in range(10)),
    radii=(1.0, 3.0, 10.0, 30.0, 100.0),
    restart_fractions=(0.003, 0.01, 0.03, 0.1),
)

# reduced grid for desk-scale runs: every other learning rate down to 0.5^6
FAST_GRID = TuningGrid(
    etas=tuple(0.5**i for i in (0, 2, 4, 6)),
    radii=(1.0, 10.0),
    restart_fractions=(0.01, 0.03),
)


class PatienceMonitor:
    def __init__(self, patience: int = 5, tolerance: float = 1.05):
        self.patience = patience
        self.tolerance = tolerance
        self.best = math.inf
        self.count = 0

    def update(self, loss: float) -> bool:
        """Feed one checkpoint loss; returns True when the run should stop."""
        if not math.isfinite(loss):
            return True
        if loss > self.tolerance * self.best:
            self.count += 1
        elif loss < self.best:
            self.count = 0
        self.best = min(self.best, loss)
        return self.count >= self.patience


@dataclass
class Attempt:
    params: dict
    eta: float
    completed: bool
    stopped_at: Optional[int] = None
    reason: str = ""
    checkpoints: dict = field(default_factory=dict)  # criterion -> list of (round, value)
    payload: object = None

    def best(self, criterion: str) -> float:
        values = [v for _, v in self.checkpoints.get(criterion, [])]
        finite = [v for v in values if math.isfinite(v)]
        return min(finite) if finite else math.inf


@dataclass
class TuningResult:
    winners: dict  # criterion -> Attempt
    attempts: list


# runner(params, eta, monitor) -> Attempt; it must call monitor.update at
# each checkpoint and stop when it returns True
Runner = Callable[[dict, float, PatienceMonitor], Attempt]


def tune(
    grid_points: Iterable[dict],
    etas: Sequence[float],
    runner: Runner,
    criteria: Sequence[str] = ("train_loss", "train_sq_grad_norm"),
    patience: Optional[int] = 5,
) -> TuningResult:
    """Search ``grid_points`` x ``etas`` (etas largest first).

    ``criteria`` are minimised over the checkpoints of the completed run at
    each grid point; ties keep the earliest grid point. ``patience=None``
    disables the patience rule (divergence still abandons).
    """
    attempts: list[Attempt] = []
    completed: list[Attempt] = []
    for params in grid_points:
        for eta in sorted(etas, reverse=True):
            monitor = PatienceMonitor(patience if patience is not None else math.inf)
            attempt = runner(dict(params), eta, monitor)
            attempts.append(attempt)
            if attempt.completed:
                completed.append(attempt)
                break
    if not completed:
        raise TuningFailure(
            f"all {len(attempts)} attempts were abandoned: "
            + "; ".join(f"{a.params} eta={a.eta}: {a.reason}" for a in attempts[:10])
        )
    winners = {}
    for criterion in criteria:
        best = None
        for a in completed:
            if best is None or a.best(criterion) < best.best(criterion):
                best = a
        winners[criterion] = best
    return TuningResult(winners, attempts)


def grid_product(**axes: Sequence) -> list[dict]:
    """Cartesian product of named axes in the given (ascending) order."""
    keys = list(axes)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(axes[k] for k in keys))]
