import math

import pytest

from diff2.harness.tuning import FAST_GRID, PAPER_GRID, Attempt, PatienceMonitor, TuningFailure, TuningGrid, grid_product, tune


def scripted(curves):
    """Runner replaying checkpoint losses from ``curves[(point, eta)]``."""
    calls = []

    def runner(params, eta, monitor):
        calls.append((params.get("C1"), eta))
        losses = curves[(params.get("C1"), eta)]
        a = Attempt(params, eta, completed=True, checkpoints={"train_loss": [], "train_sq_grad_norm": []})
        for i, loss in enumerate(losses):
            a.checkpoints["train_loss"].append((20 * i, loss))
            a.checkpoints["train_sq_grad_norm"].append((20 * i, loss / 10))
            if monitor.update(loss):
                a.completed, a.stopped_at = False, 20 * i
                break
        return a

    return runner, calls


def test_grids():
    assert PAPER_GRID.etas == tuple(0.5**i for i in range(10))
    assert PAPER_GRID.radii == (1.0, 3.0, 10.0, 30.0, 100.0)
    assert PAPER_GRID.restart_intervals(2000) == [6, 20, 60, 200]
    assert PAPER_GRID.restart_intervals(10) == [1]
    assert PAPER_GRID.restart_intervals(1) == [1]
    assert len(FAST_GRID.radii) == 2 and len(FAST_GRID.restart_fractions) == 2 and len(FAST_GRID.etas) == 4
    assert PAPER_GRID.etas_descending()[0] == 1.0
    with pytest.raises(ValueError):
        TuningGrid((), (1.0,), (0.1,))


def test_patience_arithmetic():
    m = PatienceMonitor()
    assert not m.update(1.0)
    for k in range(4):
        assert not m.update(1.2)
        assert m.count == k + 1
    assert m.update(1.2)
    m = PatienceMonitor()
    m.update(1.0)
    m.update(1.2)
    m.update(0.9)
    assert m.count == 0 and m.best == 0.9
    # within 5 % of the best: neither increments nor resets
    m.update(1.2)
    m.update(0.92)
    assert m.count == 1
    assert PatienceMonitor().update(math.nan)
    assert PatienceMonitor().update(math.inf)


def test_monotone_curve_first_eta_wins():
    runner, calls = scripted({(None, 1.0): [1.0, 0.9, 0.8, 0.7], (None, 0.5): [1.0, 0.5]})
    res = tune([{}], [0.5, 1.0], runner)
    assert calls == [(None, 1.0)]
    assert res.winners["train_loss"].eta == 1.0


def test_rising_curve_abandoned_at_fifth_check():
    runner, _ = scripted({(None, 1.0): [1.0] + [1.1] * 10, (None, 0.5): [1.0, 0.8]})
    res = tune([{}], [1.0, 0.5], runner)
    first = res.attempts[0]
    assert not first.completed and first.stopped_at == 20 * 5
    assert res.winners["train_loss"].eta == 0.5


def test_diverging_eta_skipped():
    runner, _ = scripted({(None, 1.0): [1.0, math.nan], (None, 0.5): [1.0, 0.6, 0.4]})
    res = tune([{}], [1.0, 0.5], runner)
    assert res.winners["train_loss"].eta == 0.5
    assert res.attempts[0].stopped_at == 20


def test_all_abandoned_raises():
    runner, _ = scripted({(None, 1.0): [math.nan], (None, 0.5): [math.inf]})
    with pytest.raises(TuningFailure, match="abandoned"):
        tune([{}], [1.0, 0.5], runner)


def test_criteria_and_tie_break():
    curves = {(1.0, 1.0): [1.0, 0.5], (3.0, 1.0): [1.0, 0.5], (10.0, 1.0): [1.0, 0.7]}
    runner, _ = scripted(curves)
    res = tune(grid_product(C1=(1.0, 3.0, 10.0)), [1.0], runner)
    assert res.winners["train_loss"].params == {"C1": 1.0}
    assert res.winners["train_sq_grad_norm"].params == {"C1": 1.0}


def test_patience_disabled():
    runner, _ = scripted({(None, 1.0): [1.0] + [2.0] * 20})
    res = tune([{}], [1.0], runner, patience=None)
    assert res.attempts[0].completed


def test_grid_product_order():
    pts = grid_product(C1=(1, 2), T=(5, 6))
    assert pts == [{"C1": 1, "T": 5}, {"C1": 1, "T": 6}, {"C1": 2, "T": 5}, {"C1": 2, "T": 6}]
