"""Client shards, round-robin local client selection and communication counts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import RngStream

__all__ = [
    "ClientShard",
    "CommLog",
    "Federation",
    "log_round_comm",
    "partition_iid",
    "select_local_client",
]


@dataclass(frozen=True)
class ClientShard:
    """Private local dataset of one client; rows of ``X`` pair with ``y``."""

    client_id: int
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if len(self.X) < 1:
            raise ValueError(f"client {self.client_id} has an empty shard")
        if len(self.X) != len(self.y):
            raise ValueError("features and targets disagree on sample count")

    @property
    def n(self) -> int:
        return len(self.X)


@dataclass(frozen=True)
class Federation:
    shards: tuple[ClientShard, ...]

    def __post_init__(self):
        ids = [s.client_id for s in self.shards]
        if ids != list(range(1, len(ids) + 1)):
            raise ValueError(f"client ids must be 1..P in order, got {ids}")

    @property
    def P(self) -> int:
        return len(self.shards)

    @property
    def n_min(self) -> int:
        return min(s.n for s in self.shards)

    def shard(self, client_id: int) -> ClientShard:
        return self.shards[client_id - 1]

    @classmethod
    def from_arrays(cls, parts) -> "Federation":
        return cls(tuple(ClientShard(p, X, y) for p, (X, y) in enumerate(parts, start=1)))


def partition_iid(X: np.ndarray, y: np.ndarray, P: int, stream: RngStream) -> Federation:
    """Shuffle and cut into ``P`` shards whose sizes differ by at most one.

    The first ``n mod P`` shards get the extra sample.
    """
    n = len(X)
    if P < 1:
        raise ValueError("P must be positive")
    if P > n:
        raise ValueError(f"cannot split {n} samples across {P} clients")
    perm = stream.generator().permutation(n)
    base, extra = divmod(n, P)
    parts = []
    start = 0
    for p in range(P):
        size = base + (1 if p < extra else 0)
        idx = perm[start:start + size]
        parts.append((X[idx], y[idx]))
        start += size
    return Federation.from_arrays(parts)


def select_local_client(r: int, P: int) -> int:
    """Client running local steps in round ``r``: ``1 + r mod P``."""
    if r < 1:
        raise ValueError("rounds are numbered from 1")
    return 1 + r % P


@dataclass
class CommLog:
    """Per-round counts of d-dimensional vectors moved each way."""

    entries: list[tuple[int, int, int]] = field(default_factory=list)

    def totals(self) -> tuple[int, int]:
        return sum(e[1] for e in self.entries), sum(e[2] for e in self.entries)

    def to_dict(self) -> dict:
        up, down = self.totals()
        return {"rounds": len(self.entries), "vectors_up": up, "vectors_down": down}


def log_round_comm(log: CommLog, r: int, kind: str, P: int, K: int = 1) -> CommLog:
    if log.entries and r <= log.entries[-1][0]:
        raise ValueError(f"round {r} logged out of order")
    up, down = P, P
    if kind == "bvr_lsgd":
        # x_1 down to the local client; x_K and x_{k_hat - 1} back up
        up += 2
        down += 1
    elif kind != "gd":
        raise ValueError(f"unknown routine {kind!r}")
    log.entries.append((r, up, down))
    return log
