"""Vector helpers and hierarchical seeded random streams.

Parameter and gradient vectors are plain 1-D ``numpy.float64`` arrays.

Randomness is organised as immutable :class:`RngStream` keys. A stream is a
root seed plus a derivation path of ``(label, index)`` pairs; the path is
hashed with SHA-256 into a 128-bit PCG64 seed, so every draw is a pure
function of ``(root_seed, path)`` and of the call arguments. Sequential
drawing is never shared between consumers: each purpose derives its own
child stream.

Gaussian variates use the Box-Muller transform on PCG64 doubles
(``(next_uint64 >> 11) * 2**-53``)::

    u1 = 1 - U_a              # in (0, 1]
    u2 = U_b
    z0 = sqrt(-2 ln u1) cos(2 pi u2)
    z1 = sqrt(-2 ln u1) sin(2 pi u2)

Pairs are emitted in order ``z0, z1`` and the trailing odd value dropped.
Any backend implementing PCG64 and this transform reproduces the draws
bit for bit (up to libm differences in ``log``/``cos``/``sin``).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RngStream",
    "clip_to_radius",
    "derive_stream",
    "gaussian_vector",
    "l2_norm",
    "uniform_vector",
]


def l2_norm(v: np.ndarray) -> float:
    """Euclidean norm of a flat vector."""
    v = np.asarray(v, dtype=np.float64)
    return float(math.sqrt(float(np.dot(v, v))))


def clip_to_radius(v: np.ndarray, radius: float) -> np.ndarray:
    """Scale ``v`` by ``min(radius / ||v||, 1)``.

    A zero vector is returned unchanged (scale factor 1), which also covers
    ``radius == 0`` applied to a zero displacement.
    """
    if radius < 0:
        raise ValueError(f"clipping radius must be nonnegative, got {radius}")
    v = np.asarray(v, dtype=np.float64)
    norm = l2_norm(v)
    if norm <= radius or norm == 0.0:
        return v.copy()
    clipped = v * (radius / norm)
    # one rescale can overshoot by an ulp; shrink once more so ||out|| <= radius
    if l2_norm(clipped) > radius:
        clipped = clipped * (1.0 - 2.0 * np.finfo(np.float64).eps)
    return clipped


def clip_rows(vectors: np.ndarray, radius: float) -> np.ndarray:
    """Row-wise :func:`clip_to_radius` for an ``(n, d)`` array."""
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", vectors, vectors))
    scale = np.ones_like(norms)
    over = norms > radius
    scale[over] = radius / norms[over]
    return vectors * scale[:, None]


@dataclass(frozen=True)
class RngStream:
    """Immutable key for a reproducible random stream."""

    root_seed: int
    path: tuple[tuple[str, int], ...] = ()

    def child(self, label: str, index: int = 0) -> "RngStream":
        return derive_stream(self, label, index)

    def seed_material(self) -> int:
        h = hashlib.sha256()
        h.update(b"diff2-rng-v1\x00")
        h.update(int(self.root_seed).to_bytes(16, "little", signed=True))
        for label, index in self.path:
            encoded = label.encode("utf-8")
            h.update(len(encoded).to_bytes(4, "little"))
            h.update(encoded)
            h.update(int(index).to_bytes(16, "little", signed=True))
        return int.from_bytes(h.digest()[:16], "little")

    def generator(self) -> np.random.Generator:
        """A fresh PCG64 generator positioned at the start of this stream."""
        return np.random.Generator(np.random.PCG64(self.seed_material()))


def derive_stream(parent: RngStream, label: str, index: int = 0) -> RngStream:
    """Child stream of ``parent``; injective in ``(label, index)``."""
    return RngStream(parent.root_seed, parent.path + ((str(label), int(index)),))


def _box_muller(gen: np.random.Generator, dim: int) -> np.ndarray:
    pairs = (dim + 1) // 2
    u = gen.random(2 * pairs)
    u1 = 1.0 - u[0::2]
    u2 = u[1::2]
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.empty(2 * pairs, dtype=np.float64)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return z[:dim]


def gaussian_vector(std: float, dim: int, stream: RngStream) -> np.ndarray:
    """``dim`` i.i.d. draws from N(0, std^2) read from ``stream``.

    The uniforms are drawn for every call, including ``std == 0``, so noisy
    and noiseless runs consume identical stream positions.
    """
    if std < 0:
        raise ValueError(f"std must be nonnegative, got {std}")
    if dim < 1:
        raise ValueError(f"dim must be positive, got {dim}")
    z = _box_muller(stream.generator(), dim)
    if std == 0.0:
        return np.zeros(dim, dtype=np.float64)
    return std * z


def uniform_vector(low: float, high: float, dim: int, stream: RngStream) -> np.ndarray:
    """``dim`` i.i.d. draws from U[low, high)."""
    u = stream.generator().random(dim)
    return low + (high - low) * u
