"""Graph readouts: flat sum/average/max and singular-vector pooling.

Singular-vector pooling summarises a node-embedding matrix ``H`` (n x d) by
``tau * v1(H)``, the dominant right singular vector scaled by ``tau``. ``v1``
is estimated with a few power-iteration steps on ``H^T H`` that are recorded
on the tape, so the readout is differentiable end to end. A cyclic Jacobi
eigensolver provides an independent reference for testing.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "PoolingKind",
    "SpectralInfo",
    "DegenerateInputError",
    "SpectralGapWarning",
    "pool",
    "pool_flat",
    "start_vector",
    "power_iteration",
    "sign_normalize",
    "sign_of",
    "rs_pool",
    "jacobi_eigh",
    "svd_oracle",
    "GAP_RTOL",
]

GAP_RTOL = 1e-9
SIGN_ATOL = 1e-9


class DegenerateInputError(ValueError):
    pass


class SpectralGapWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PoolingKind:
    """Readout selector.

    For ``rs_pool`` exactly one of ``tau`` (fixed scale) and ``alpha``
    (``tau = sigma1 / alpha``) is set; ``k`` is the number of power-iteration
    steps and ``seed`` fixes the start vector.
    """

    variant: str = "sum"
    k: int = 2
    tau: float | None = None
    alpha: float | None = None
    output_mode: str = "right_singular"
    seed: int = 0

    def __post_init__(self):
        if self.variant not in ("sum", "average", "max", "rs_pool"):
            raise ValueError(f"unknown pooling variant {self.variant!r}")
        if self.variant != "rs_pool":
            return
        if self.k < 1:
            raise ValueError("rs_pool needs k >= 1")
        if (self.tau is None) == (self.alpha is None):
            if self.tau is None and self.alpha is None:
                object.__setattr__(self, "tau", 1.0)
            else:
                raise ValueError("set exactly one of tau and alpha")
        if self.tau is not None and self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.output_mode not in ("right_singular", "projected"):
            raise ValueError(f"unknown output mode {self.output_mode!r}")

    @classmethod
    def rs(cls, k: int = 2, tau: float | None = None, alpha: float | None = None, **kw) -> "PoolingKind":
        return cls("rs_pool", k=k, tau=tau, alpha=alpha, **kw)

    def to_dict(self) -> dict:
        d = {"variant": self.variant}
        if self.variant == "rs_pool":
            d.update(k=self.k, tau=self.tau, alpha=self.alpha, output_mode=self.output_mode, seed=self.seed)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PoolingKind":
        return cls(**d)

    def __str__(self) -> str:
        if self.variant != "rs_pool":
            return self.variant
        scale = f"tau={self.tau:g}" if self.tau is not None else f"alpha={self.alpha:g}"
        return f"rs_pool(k={self.k},{scale})"


@dataclass(frozen=True)
class SpectralInfo:
    sigma1: float
    sigma2: float
    v1: np.ndarray

    @property
    def gap(self) -> float:
        return self.sigma1 - self.sigma2

    @property
    def ratio(self) -> float:
        return self.sigma2 / self.sigma1 if self.sigma1 > 0 else 1.0


# --- flat readouts --------------------------------------------------------------


def pool_flat(h: Tensor, kind: str) -> Tensor:
    if h.rows < 1:
        raise T.DimensionError("pooling needs at least one node")
    if kind == "sum":
        return T.col_sum(h)
    if kind == "average":
        return T.col_mean(h)
    if kind == "max":
        return T.col_max(h)
    raise ValueError(f"{kind!r} is not a flat pooling")


def pool(h: Tensor, kind: PoolingKind, check_gap: bool = False) -> Tensor:
    """Dispatch to the readout named by ``kind``."""
    if kind.variant == "rs_pool":
        return rs_pool(h, kind, check_gap=check_gap)
    return pool_flat(h, kind.variant)


# --- power iteration ----------------------------------------------------------------


@lru_cache(maxsize=256)
def _start(d: int, seed: int) -> np.ndarray:
    v = np.random.default_rng(seed).standard_normal((d, 1))
    v /= np.linalg.norm(v)
    v.flags.writeable = False
    return v


def start_vector(d: int, seed: int = 0) -> np.ndarray:
    """Seeded unit start vector; depends only on ``d`` and ``seed``."""
    return _start(d, seed).copy()


def power_iteration(h: Tensor, k: int, seed: int = 0) -> tuple[Tensor, Tensor]:
    """Run ``k`` steps of ``v <- S v / ||S v||`` with ``S = H^T H``.

    Returns the unit column vector ``v`` (d x 1) and the Rayleigh quotient
    ``v^T S v`` (an estimate of sigma1 squared), both on ``h``'s tape.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if not np.any(h.data):
        raise DegenerateInputError("power iteration on an all-zero matrix")
    s = T.matmul(T.transpose(h), h)
    tiny = np.finfo(float).tiny ** 0.5
    for attempt in range(2):
        v = Tensor(_start(h.cols, seed + attempt))
        for _ in range(k):
            w = T.matmul(s, v)
            if np.linalg.norm(w.data) < tiny:
                break
            v = T.normalize(w)
        else:
            rayleigh = T.matmul(T.transpose(v), T.matmul(s, v))
            return v, rayleigh
    raise DegenerateInputError("power iteration underflowed twice")


def sign_of(v: np.ndarray) -> float:
    flat = np.ravel(v)
    big = np.flatnonzero(np.abs(flat) > SIGN_ATOL)
    if big.size == 0:
        raise DegenerateInputError("every entry is below the sign threshold")
    return 1.0 if flat[big[0]] > 0 else -1.0


def sign_normalize(v):
    """Flip ``v`` so that its first entry with magnitude above 1e-9 is positive.

    Works on arrays and tensors; for tensors the flip is a constant factor.
    """
    if isinstance(v, Tensor):
        return T.scale(v, sign_of(v.data))
    arr = np.asarray(v, dtype=float)
    return arr * sign_of(arr)


def _gap_is_degenerate(h: np.ndarray) -> bool:
    sv = np.linalg.svd(h, compute_uv=False)
    if sv.size < 2:
        return False
    return sv[0] - sv[1] <= GAP_RTOL * sv[0]


def rs_pool(h: Tensor, kind: PoolingKind, check_gap: bool = False) -> Tensor:
    """``tau * v1(H)`` as a ``1 x d`` row, or ``tau * H v`` (``1 x n``) in projected mode.

    With ``alpha`` set, ``tau = sqrt(rayleigh) / alpha`` is computed from the
    power-iteration estimate and treated as a constant.
    """
    if kind.variant != "rs_pool":
        raise ValueError("rs_pool needs an rs_pool PoolingKind")
    if check_gap and _gap_is_degenerate(h.data):
        warnings.warn("zero spectral gap: dominant singular vector is not unique", SpectralGapWarning, stacklevel=2)
    v, rayleigh = power_iteration(h, kind.k, kind.seed)
    if kind.tau is not None:
        tau = kind.tau
    else:
        tau = math.sqrt(max(rayleigh.item(), 0.0)) / kind.alpha
    if kind.output_mode == "projected":
        return T.transpose(T.scale(T.matmul(h, v), tau))
    return T.transpose(T.scale(v, tau * sign_of(v.data)))


# --- Jacobi reference -------------------------------------------------------------------


def jacobi_eigh(s: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps run until the off-diagonal Frobenius norm drops below
    ``tol * max(1, ||S||_F)``. Returns eigenvalues (descending) and the
    matching eigenvectors as columns.
    """
    a = np.array(s, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise T.DimensionError("jacobi_eigh needs a square matrix")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max(initial=0))):
        raise ValueError("jacobi_eigh needs a symmetric matrix")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    thresh = tol * max(1.0, np.linalg.norm(a))

    def off(m):
        return float(np.linalg.norm(m - np.diag(np.diag(m))))

    for _ in range(max_sweeps):
        if off(a) < thresh:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta  # theta**2 would overflow
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                sn = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - sn * aq
                a[:, q] = sn * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - sn * rq
                a[q, :] = sn * rp + c * rq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                v[:, p] = c * vp - sn * v[:, q]
                v[:, q] = sn * vp + c * v[:, q]
    else:
        if off(a) >= thresh:
            raise ArithmeticError(f"Jacobi did not converge in {max_sweeps} sweeps")
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def svd_oracle(h) -> SpectralInfo:
    """Top two singular values and sign-normalised ``v1`` via Jacobi on ``H^T H``."""
    arr = h.data if isinstance(h, Tensor) else np.asarray(h, dtype=np.float64)
    if arr.ndim != 2:
        raise T.DimensionError("svd_oracle needs a matrix")
    if not np.isfinite(arr).all():
        raise T.NumericError("svd_oracle input is not finite")
    w, vecs = jacobi_eigh(arr.T @ arr)
    sv = np.sqrt(np.clip(w, 0.0, None))
    s1 = float(sv[0])
    s2 = float(sv[1]) if sv.size > 1 else 0.0
    v1 = vecs[:, 0]
    if np.any(np.abs(v1) > SIGN_ATOL):
        v1 = sign_normalize(v1)
    return SpectralInfo(s1, s2, v1)
