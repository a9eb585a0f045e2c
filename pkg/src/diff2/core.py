"""DIFF2 global-gradient estimation with GD and BVR-L-SGD routines.

Rounds are numbered ``r = 1..R``; round ``r`` is a restart round iff
``(r - 1) % T == 0``. On restart rounds every client sends the clipped mean
of its per-sample gradients at ``x_{r-1}`` (radius ``C1``). Otherwise it
sends the clipped mean of per-sample gradient differences between
``x_{r-1}`` and ``x_{r-2}`` at radius ``C2 * ||x_{r-1} - x_{r-2}||``, and the
server adds the aggregate to the previous private estimator. Noise std is
``sigma * radius`` in both cases.

Random streams (children of the run stream):

* ``("round", r) / ("noise", 0)``: server noise of round ``r``
* ``("round", r) / ("local", 0)``: BVR local routine of round ``r``
* ``("output", 0)``: the uniformly drawn output round
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .federation import ClientShard, CommLog, Federation, log_round_comm, select_local_client
from .models import FactoredGradients, ModelSpec, factored_gradients
from .numerics import RngStream, clip_rows, gaussian_vector, l2_norm

__all__ = [
    "Diff2Config",
    "RoundMessage",
    "RunOutput",
    "aggregate_and_privatize",
    "bvr_lsgd_routine",
    "clipped_mean",
    "gd_routine",
    "is_restart_round",
    "local_message",
    "run_diff2",
    "run_dp_gd",
]


@dataclass(frozen=True)
class Diff2Config:
    R: int
    T: int
    eta: float
    C1: float
    C2: float = 1.0
    sigma1: float = 0.0
    sigma2: float = 0.0
    routine: str = "gd"
    C3: float = 1.0
    sigma3: float = 0.0
    K: int = 1
    b: int = 1

    def __post_init__(self):
        if self.R < 1 or not 1 <= self.T <= self.R:
            raise ValueError(f"need 1 <= T <= R, got T={self.T}, R={self.R}")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not (self.C1 > 0 and self.C2 > 0 and self.C3 > 0):
            raise ValueError("clipping radii must be positive")
        if min(self.sigma1, self.sigma2, self.sigma3) < 0:
            raise ValueError("noise multipliers must be nonnegative")
        if self.routine not in ("gd", "bvr_lsgd"):
            raise ValueError(f"unknown routine {self.routine!r}")
        if self.routine == "bvr_lsgd" and (self.K < 1 or self.b < 1):
            raise ValueError("BVR-L-SGD needs K >= 1 and b >= 1")


@dataclass(frozen=True)
class RoundMessage:
    client_id: int
    vector: np.ndarray
    kind: str  # "gradient" or "difference"
    radius_used: float


@dataclass
class RunOutput:
    trajectory: list[np.ndarray]
    outputs: list[np.ndarray]
    r_hat: Optional[int] = None
    comm: CommLog = field(default_factory=CommLog)
    diverged_at: Optional[int] = None
    stopped_at: Optional[int] = None

    @property
    def x_out(self) -> Optional[np.ndarray]:
        """``x^out_{r_hat - 1}`` with ``x^out_0 = x_0``."""
        if self.r_hat is None:
            return None
        return self.outputs[self.r_hat - 1]

    @property
    def completed(self) -> bool:
        return self.diverged_at is None and self.stopped_at is None


class _Stacked:
    """All shards concatenated, with per-sample weights ``1 / (n_p P)``.

    The server aggregate ``(1/P) sum_p ClippedMean_p`` equals one weighted
    sum over the stacked samples, which is much cheaper than P separate
    reductions. :func:`local_message` and :func:`aggregate_and_privatize`
    remain the per-client reference for the same quantity.
    """

    def __init__(self, federation: Federation):
        self.X = np.concatenate([s.X for s in federation.shards])
        self.y = np.concatenate([s.y for s in federation.shards])
        self.w = np.concatenate([np.full(s.n, 1.0 / (s.n * federation.P)) for s in federation.shards])

    def grads(self, spec: ModelSpec, x: np.ndarray) -> FactoredGradients:
        return factored_gradients(spec, x, self.X, self.y)

    def clipped_aggregate(self, fg: FactoredGradients, radius: float) -> np.ndarray:
        norms = np.sqrt(fg.sq_norms())
        scale = np.ones(len(fg))
        over = norms > radius
        scale[over] = radius / norms[over]
        return fg.weighted_sum(scale * self.w)


def is_restart_round(r: int, T: int) -> bool:
    return (r - 1) % T == 0


def _noise_std(sigma: float, radius: float) -> float:
    # sigma = 0 with an infinite radius means "no noise", not nan
    return 0.0 if sigma == 0 else sigma * radius


def clipped_mean(vectors, C: float) -> np.ndarray:
    """Mean of the vectors after clipping each to norm ``C``.

    ``vectors`` is an ``(n, d)`` array or a :class:`FactoredGradients`.
    """
    if isinstance(vectors, FactoredGradients):
        n = len(vectors)
        if n == 0:
            raise ValueError("clipped_mean needs a nonempty collection")
        norms = np.sqrt(vectors.sq_norms())
        scale = np.ones(n)
        over = norms > C
        scale[over] = C / norms[over]
        return vectors.weighted_sum(scale / n)
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("clipped_mean needs a nonempty (n, d) collection")
    return clip_rows(arr, C).mean(axis=0)


def local_message(
    spec: ModelSpec,
    shard: ClientShard,
    x_curr: np.ndarray,
    x_prev: Optional[np.ndarray],
    is_restart: bool,
    C1: float,
    C2: float,
    grads_curr: Optional[np.ndarray] = None,
    grads_prev: Optional[np.ndarray] = None,
) -> RoundMessage:
    """Message ``d_r^(p)`` of one client.

    ``x_curr`` is ``x_{r-1}`` and ``x_prev`` is ``x_{r-2}``. Per-sample
    gradients at either point may be passed in to avoid recomputation.
    """
    if grads_curr is None:
        grads_curr = factored_gradients(spec, x_curr, shard.X, shard.y)
    if is_restart:
        return RoundMessage(shard.client_id, clipped_mean(grads_curr, C1), "gradient", C1)
    if x_prev is None:
        raise ValueError("a difference round needs x_{r-2}")
    if grads_prev is None:
        grads_prev = factored_gradients(spec, x_prev, shard.X, shard.y)
    radius = C2 * l2_norm(x_curr - x_prev)
    return RoundMessage(shard.client_id, clipped_mean(grads_curr - grads_prev, radius), "difference", radius)


def aggregate_and_privatize(
    messages: Sequence[RoundMessage],
    v_prev: Optional[np.ndarray],
    sigma: float,
    stream: RngStream,
) -> np.ndarray:
    """``v_r = mean_p d_r^(p) + v~_{r-1}`` plus N(0, (sigma C)^2 I).

    ``v_prev`` is ignored on restart (gradient) rounds.
    """
    if not messages:
        raise ValueError("no client messages to aggregate")
    kinds = {m.kind for m in messages}
    radii = {m.radius_used for m in messages}
    if len(kinds) != 1 or len(radii) != 1:
        raise ValueError(f"inconsistent messages: kinds={kinds}, radii={radii}")
    kind, radius = kinds.pop(), radii.pop()
    # fixed reduction order (ascending client id) keeps runs bit-reproducible
    ordered = sorted(messages, key=lambda m: m.client_id)
    total = ordered[0].vector.copy()
    for m in ordered[1:]:
        total = total + m.vector
    v = total / len(messages)
    if kind == "difference":
        if v_prev is None:
            raise ValueError("a difference round needs the previous estimator")
        v = v + v_prev
    noise = gaussian_vector(_noise_std(sigma, radius), v.size, stream)
    return v + noise


def gd_routine(x_prev: np.ndarray, v_tilde: np.ndarray, eta: float):
    """One gradient step; the candidate output is the new iterate."""
    x = x_prev - eta * v_tilde
    return x, x.copy()


def bvr_lsgd_routine(
    spec: ModelSpec,
    x0: np.ndarray,
    v1_tilde: np.ndarray,
    eta: float,
    b: int,
    sigma3: float,
    C3: float,
    K: int,
    shard: ClientShard,
    stream: RngStream,
):
    """Local bias-variance-reduced SGD on one client.

    Returns ``(x_K, x_{k_hat - 1}, k_hat)`` with ``k_hat ~ Unif[K]`` and
    ``x_0`` the round's starting point.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if b > shard.n:
        raise ValueError(f"minibatch b={b} exceeds shard size {shard.n}")
    xs = [np.asarray(x0, dtype=np.float64), x0 - eta * v1_tilde]
    v_tilde = v1_tilde
    for k in range(2, K + 1):
        step = stream.child("step", k)
        idx = step.child("minibatch").generator().choice(shard.n, size=b, replace=False)
        Xb, yb = shard.X[idx], shard.y[idx]
        x_km1, x_km2 = xs[k - 1], xs[k - 2]
        radius = C3 * l2_norm(x_km1 - x_km2)
        diffs = factored_gradients(spec, x_km1, Xb, yb) - factored_gradients(spec, x_km2, Xb, yb)
        v = clipped_mean(diffs, radius) + v_tilde
        v_tilde = v + gaussian_vector(_noise_std(sigma3, radius), v.size, step.child("noise"))
        xs.append(x_km1 - eta * v_tilde)
    k_hat = 1 + int(stream.child("k_hat").generator().integers(K))
    return xs[K], xs[k_hat - 1], k_hat


def run_diff2(
    config: Diff2Config,
    federation: Federation,
    spec: ModelSpec,
    params0: np.ndarray,
    stream: RngStream,
    observer: Optional[Callable[[int, np.ndarray], bool]] = None,
) -> RunOutput:
    """Run R rounds of DIFF2 with the configured routine.

    ``observer(r, x_r)`` is called for ``r = 0..R``; returning True stops the
    run early (recorded in ``stopped_at``). A non-finite estimator or iterate
    ends the run with ``diverged_at`` set.
    """
    cfg = config
    x = np.asarray(params0, dtype=np.float64).copy()
    out = RunOutput(trajectory=[x.copy()], outputs=[x.copy()])
    if observer is not None and observer(0, x):
        out.stopped_at = 0
        return out
    stacked = _Stacked(federation)
    x_prev2: Optional[np.ndarray] = None
    v_tilde: Optional[np.ndarray] = None
    cached: Optional[FactoredGradients] = None  # grads at x_{r-2}
    for r in range(1, cfg.R + 1):
        restart = is_restart_round(r, cfg.T)
        current = stacked.grads(spec, x)
        if restart:
            radius, sigma = cfg.C1, cfg.sigma1
            v = stacked.clipped_aggregate(current, radius)
        else:
            radius, sigma = cfg.C2 * l2_norm(x - x_prev2), cfg.sigma2
            v = stacked.clipped_aggregate(current - cached, radius) + v_tilde
        round_stream = stream.child("round", r)
        v_tilde = v + gaussian_vector(_noise_std(sigma, radius), v.size, round_stream.child("noise"))
        if cfg.routine == "gd":
            x_new, x_out = gd_routine(x, v_tilde, cfg.eta)
            kind = "gd"
        else:
            shard = federation.shard(select_local_client(r, federation.P))
            x_new, x_out, _ = bvr_lsgd_routine(
                spec, x, v_tilde, cfg.eta, cfg.b, cfg.sigma3, cfg.C3, cfg.K, shard,
                round_stream.child("local"),
            )
            kind = "bvr_lsgd"
        log_round_comm(out.comm, r, kind, federation.P, cfg.K)
        if not (np.all(np.isfinite(v_tilde)) and np.all(np.isfinite(x_new))):
            out.diverged_at = r
            return out
        x_prev2, x, cached = x, x_new, current
        out.trajectory.append(x.copy())
        out.outputs.append(x_out)
        if observer is not None and observer(r, x):
            out.stopped_at = r
            return out
    out.r_hat = 1 + int(stream.child("output").generator().integers(cfg.R))
    return out


def run_dp_gd(
    R: int,
    eta: float,
    C1: float,
    sigma1: float,
    federation: Federation,
    spec: ModelSpec,
    params0: np.ndarray,
    stream: RngStream,
    observer: Optional[Callable[[int, np.ndarray], bool]] = None,
) -> RunOutput:
    """Plain DP-GD: clipped per-sample gradients plus Gaussian noise every round.

    Uses the same stream layout as :func:`run_diff2`, so it reproduces
    ``run_diff2`` with ``T = 1`` exactly.
    """
    x = np.asarray(params0, dtype=np.float64).copy()
    out = RunOutput(trajectory=[x.copy()], outputs=[x.copy()])
    if observer is not None and observer(0, x):
        out.stopped_at = 0
        return out
    stacked = _Stacked(federation)
    for r in range(1, R + 1):
        g = stacked.clipped_aggregate(stacked.grads(spec, x), C1)
        g = g + gaussian_vector(_noise_std(sigma1, C1), g.size, stream.child("round", r).child("noise"))
        x = x - eta * g
        log_round_comm(out.comm, r, "gd", federation.P)
        if not np.all(np.isfinite(x)):
            out.diverged_at = r
            return out
        out.trajectory.append(x.copy())
        out.outputs.append(x.copy())
        if observer is not None and observer(r, x):
            out.stopped_at = r
            return out
    out.r_hat = 1 + int(stream.child("output").generator().integers(R))
    return out
