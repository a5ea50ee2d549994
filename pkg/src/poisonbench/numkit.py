"""Dense vector/matrix checks, a matrix-free conjugate-gradient solver, and
central finite-difference oracles.

Everything here is pure and operates on float64 numpy arrays. The CG solver
is the workhorse behind every inverse-Hessian-vector product in the attack
modules; the finite-difference helpers exist so analytic gradients and HVPs
always have an independent cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import DimMismatch, NonFiniteIterate

Operator = Callable[[np.ndarray], np.ndarray]


def as_vec(x) -> np.ndarray:
    """Validate and return a finite 1-d float64 vector of length >= 1."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise DimMismatch(f"expected 1-d vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteIterate("vector has non-finite entries")
    return v


def as_mat(x, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Validate and return a finite 2-d float64 matrix, row-major."""
    m = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if m.ndim != 2:
        raise DimMismatch(f"expected 2-d matrix, got shape {m.shape}")
    if rows is not None and m.shape[0] != rows:
        raise DimMismatch(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise DimMismatch(f"expected {cols} cols, got {m.shape[1]}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteIterate("matrix has non-finite entries")
    return m


@dataclass(frozen=True)
class CgConfig:
    """Conjugate-gradient settings.

    damping is added to the operator diagonal, keeping CG well posed on
    singular or underdetermined Hessians.
    """

    max_iters: int = 32
    residual_tol: float = 1e-4
    damping: float = 1e-4

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.residual_tol <= 0:
            raise ValueError("residual_tol must be > 0")
        if self.damping < 0:
            raise ValueError("damping must be >= 0")


class CgResult(NamedTuple):
    x: np.ndarray
    converged: bool
    iters: int
    rel_residual: float


def cg_solve(apply_a: Operator, b, cfg: CgConfig = CgConfig()) -> CgResult:
    """Solve (A + damping*I) x = b for symmetric PSD A given only matvecs.

    Returns the first iterate whose relative l2 residual drops below
    cfg.residual_tol, or the best iterate seen when max_iters is exhausted
    (converged=False in that case).
    """
    b = as_vec(b)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return CgResult(np.zeros_like(b), True, 0, 0.0)

    def op(v):
        out = np.asarray(apply_a(v), dtype=np.float64)
        if out.shape != b.shape:
            raise DimMismatch("operator output shape does not match b")
        return out + cfg.damping * v

    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    best_x, best_res = x.copy(), np.sqrt(rs) / b_norm

    for it in range(1, cfg.max_iters + 1):
        ap = op(p)
        pap = float(p @ ap)
        if not np.isfinite(pap):
            raise NonFiniteIterate("CG encountered a non-finite curvature; operator may be indefinite")
        if pap <= 0.0:
            # Indefinite or numerically zero curvature: stop with best iterate.
            return CgResult(best_x, False, it, best_res)
        alpha = rs / pap
        x = x + alpha * p
        r = r - alpha * ap
        if not np.all(np.isfinite(x)):
            raise NonFiniteIterate("CG iterate became non-finite")
        rs_new = float(r @ r)
        rel = np.sqrt(rs_new) / b_norm
        if rel < best_res:
            best_x, best_res = x.copy(), rel
        if rel <= cfg.residual_tol:
            return CgResult(x, True, it, rel)
        p = r + (rs_new / rs) * p
        rs = rs_new

    return CgResult(best_x, False, cfg.max_iters, best_res)


def fd_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient: entry i is (f(x+h e_i) - f(x-h e_i)) / 2h."""
    x = as_vec(x)
    g = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def fd_hvp(grad_f: Callable[[np.ndarray], np.ndarray], x, v, h: float = 1e-5) -> np.ndarray:
    """Central-difference Hessian-vector product along v."""
    x = as_vec(x)
    v = as_vec(v)
    if x.size != v.size:
        raise DimMismatch(f"x has length {x.size} but v has length {v.size}")
    gp = np.asarray(grad_f(x + h * v), dtype=np.float64)
    gm = np.asarray(grad_f(x - h * v), dtype=np.float64)
    return (gp - gm) / (2.0 * h)
