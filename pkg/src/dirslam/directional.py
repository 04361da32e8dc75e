"""
Directional statistics on the 2-sphere.

von-Mises-Fisher (vMF) density, an exact inverse-CDF sampler, and the
vMF approximation of a Bingham-type quadratic form that arises from the
surfel planarity term. Everything here is fixed to D=3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOG_4PI = float(np.log(4.0 * np.pi))

# below this the vMF is treated as uniform on the sphere
TAU_UNIFORM_EPS = 1e-10

# degenerate Bingham scatter (no same-segment neighbours)
BINGHAM_DEGENERATE_EPS = 1e-12


@dataclass(frozen=True)
class VonMisesFisher:
    """vMF(mode, tau) on S^2; ``tau == 0`` is the uniform distribution."""

    mode: np.ndarray
    tau: float

    def __post_init__(self):
        if not self.tau >= 0.0:
            raise ValueError(f"concentration must be >= 0, got {self.tau}")
        object.__setattr__(self, "mode", normalize(np.asarray(self.mode, dtype=float)))


def normalize(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """Scale vectors to unit length along ``axis``; zero vectors stay zero."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=axis, keepdims=True)
    return np.divide(v, n, out=np.zeros_like(v), where=n > 0)


def log_sinh(x):
    """log(sinh(x)) for x > 0 without overflow."""
    x = np.asarray(x, dtype=float)
    return x + np.log1p(-np.exp(-2.0 * x)) - np.log(2.0)


def log_vmf_normalizer(tau):
    """log C_3(tau) = log(tau / (4 pi sinh tau)), continuous at tau = 0."""
    tau = np.asarray(tau, dtype=float)
    small = tau < 1e-6
    safe = np.where(small, 1.0, tau)
    out = np.log(safe) - LOG_4PI - log_sinh(safe)
    # tau/sinh(tau) = 1 - tau^2/6 + ...
    out = np.where(small, -LOG_4PI - tau * tau / 6.0, out)
    return out if out.ndim else float(out)


def vmf_logpdf(mode, tau, x):
    """Log density of vMF(mode, tau) at unit vector(s) ``x``.

    Broadcasts over leading dimensions of ``mode``, ``tau`` and ``x``.
    Stable up to tau ~ 1e300 since sinh is handled in the log domain.
    """
    mode = np.asarray(mode, dtype=float)
    x = np.asarray(x, dtype=float)
    dot = np.sum(mode * x, axis=-1)
    out = log_vmf_normalizer(tau) + np.asarray(tau, dtype=float) * dot
    return out if np.ndim(out) else float(out)


def mean_resultant_length(tau):
    """A_3(tau) = coth(tau) - 1/tau, the expected cosine to the mode."""
    tau = np.asarray(tau, dtype=float)
    small = tau < 1e-4
    safe = np.where(small, 1.0, tau)
    out = np.where(small, tau / 3.0, 1.0 / np.tanh(safe) - 1.0 / safe)
    return out if out.ndim else float(out)


def orthonormal_tangents(mode: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors completing ``mode`` (shape (..., 3)) to a right-handed frame."""
    mode = np.asarray(mode, dtype=float)
    helper = np.zeros_like(mode)
    # pick the axis least aligned with the mode
    idx = np.argmin(np.abs(mode), axis=-1)
    np.put_along_axis(helper, idx[..., None], 1.0, axis=-1)
    u = normalize(np.cross(mode, helper))
    v = np.cross(mode, u)
    return u, v


def sample_vmf_cosine(tau, u):
    """Inverse CDF of the cosine to the mode, w in [-1, 1], for D=3.

    F(w) = (e^{tau w} - e^{-tau}) / (e^{tau} - e^{-tau})  inverts to
    w = 1 + log(u + (1 - u) e^{-2 tau}) / tau.
    """
    tau = np.asarray(tau, dtype=float)
    u = np.asarray(u, dtype=float)
    uniform = tau < TAU_UNIFORM_EPS
    safe = np.where(uniform, 1.0, tau)
    w = 1.0 + np.log(np.exp(-2.0 * safe) - u * np.expm1(-2.0 * safe)) / safe
    w = np.where(uniform, 2.0 * u - 1.0, w)
    return np.clip(w, -1.0, 1.0)


def sample_vmf(mode, tau, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw unit vectors from vMF(mode, tau).

    ``mode`` may be (3,) or (N, 3) with ``tau`` scalar or (N,); with a
    single mode, ``size`` draws are returned as (size, 3). tau = 0 gives
    uniform draws on the sphere.
    """
    if size is None and np.ndim(mode) == 1 and np.ndim(tau) == 0:
        return _sample_vmf_one(np.asarray(mode, dtype=float), float(tau), rng)
    mode = normalize(np.asarray(mode, dtype=float))
    tau = np.asarray(tau, dtype=float)
    if mode.ndim == 1 and size is not None:
        mode = np.broadcast_to(mode, (size, 3))
        tau = np.broadcast_to(tau, (size,))
    shape = mode.shape[:-1]
    tau = np.broadcast_to(tau, shape)

    w = sample_vmf_cosine(tau, rng.random(shape))
    phi = rng.random(shape) * (2.0 * np.pi)
    u, v = orthonormal_tangents(mode)
    s = np.sqrt(np.maximum(0.0, 1.0 - w * w))
    out = (w[..., None] * mode
           + (s * np.cos(phi))[..., None] * u
           + (s * np.sin(phi))[..., None] * v)
    return normalize(out)


def _sample_vmf_one(mode: np.ndarray, tau: float, rng: np.random.Generator) -> np.ndarray:
    """Scalar-path draw of a single vMF sample; same stream use as the batch path."""
    norm = math.sqrt(mode[0] * mode[0] + mode[1] * mode[1] + mode[2] * mode[2])
    m0, m1, m2 = (mode[0] / norm, mode[1] / norm, mode[2] / norm) if norm > 0 else (0.0, 0.0, 0.0)
    u = rng.random()
    if tau < TAU_UNIFORM_EPS:
        w = 2.0 * u - 1.0
    else:
        w = 1.0 + math.log(math.exp(-2.0 * tau) - u * math.expm1(-2.0 * tau)) / tau
        w = min(1.0, max(-1.0, w))
    phi = rng.random() * (2.0 * math.pi)
    # tangent basis matching orthonormal_tangents
    a = (abs(m0), abs(m1), abs(m2))
    k = a.index(min(a))
    h = [0.0, 0.0, 0.0]
    h[k] = 1.0
    u0, u1, u2 = m1 * h[2] - m2 * h[1], m2 * h[0] - m0 * h[2], m0 * h[1] - m1 * h[0]
    un = math.sqrt(u0 * u0 + u1 * u1 + u2 * u2)
    if un > 0:
        u0, u1, u2 = u0 / un, u1 / un, u2 / un
    v0, v1, v2 = m1 * u2 - m2 * u1, m2 * u0 - m0 * u2, m0 * u1 - m1 * u0
    s = math.sqrt(max(0.0, 1.0 - w * w))
    c, t = s * math.cos(phi), s * math.sin(phi)
    out = np.array([w * m0 + c * u0 + t * v0, w * m1 + c * u1 + t * v1, w * m2 + c * u2 + t * v2])
    n = math.sqrt(out @ out)
    return out / n if n > 0 else out


def sym_eigh(S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigen-decomposition of symmetric 3x3 matrices with fixed signs.

    Each eigenvector is flipped so its largest-magnitude component is
    positive, which makes modes reproducible across runs.
    """
    S = np.asarray(S, dtype=float)
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    evals, evecs = np.linalg.eigh(S)
    idx = np.argmax(np.abs(evecs), axis=-2)
    lead = np.take_along_axis(evecs, idx[..., None, :], axis=-2)
    evecs = evecs * np.where(lead < 0, -1.0, 1.0)
    return evals, evecs


def bingham_concentration(e2, e3, literal: bool = False):
    """Concentration of the vMF replacing exp(-0.5 n^T S n).

    Harmonic-mean form 2 e2 e3 / (e2 + e3). ``literal=True`` gives the
    2 e2 e2 / (e2 + e3) variant. Zero when e2 + e3 is (numerically) zero.
    """
    e2 = np.maximum(np.asarray(e2, dtype=float), 0.0)
    e3 = np.maximum(np.asarray(e3, dtype=float), 0.0)
    denom = e2 + e3
    degenerate = denom < BINGHAM_DEGENERATE_EPS
    num = 2.0 * e2 * (e2 if literal else e3)
    out = np.where(degenerate, 0.0, num / np.where(degenerate, 1.0, denom))
    return out if out.ndim else float(out)


def bingham_to_vmf_batch(S: np.ndarray, literal: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`bingham_to_vmf` over (N, 3, 3); returns (modes, kappas)."""
    evals, evecs = sym_eigh(S)
    kappa = bingham_concentration(evals[..., 1], evals[..., 2], literal=literal)
    return evecs[..., :, 0], np.asarray(kappa)


def bingham_to_vmf(S: np.ndarray, literal: bool = False) -> VonMisesFisher:
    """vMF approximation of the Bingham density exp(-0.5 n^T S n).

    The mode is the eigenvector of the smallest eigenvalue of ``S``; the
    concentration is the harmonic mean of the two larger eigenvalues,
    so curvature around the mode matches on average.
    """
    mode, kappa = bingham_to_vmf_batch(np.asarray(S, dtype=float), literal=literal)
    return VonMisesFisher(mode=mode, tau=float(kappa))


def fibonacci_sphere(n: int) -> np.ndarray:
    """Near-uniform grid of ``n`` points on S^2 (equal-area cells)."""
    i = np.arange(n) + 0.5
    polar = np.arccos(1.0 - 2.0 * i / n)
    azim = np.pi * (1.0 + 5.0 ** 0.5) * i
    return np.stack([np.cos(azim) * np.sin(polar),
                     np.sin(azim) * np.sin(polar),
                     np.cos(polar)], axis=1)
