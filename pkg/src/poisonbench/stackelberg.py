"""Sequential-game update rules parameterized over a leader loss F and a
follower loss f, plus the total-derivative machinery they share.

Six solvers: GD, kGD, uGD (unrolled, a.k.a. back-gradient), tGD, FR, GDN.
All steppers are descent-descent; attack wrappers negate the leader loss to
realize ascent. The default update mode is alternating (follower moves first
inside a step and the leader sees the refreshed follower).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import NonFiniteGradient
from .numkit import CgConfig, cg_solve


@dataclass
class GameState:
    x: np.ndarray
    w: np.ndarray
    eta_leader: float
    eta_follower: float
    t: int = 0
    update_mode: str = "alternating"

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64).ravel().copy()
        self.w = np.asarray(self.w, dtype=np.float64).ravel().copy()
        if self.eta_leader <= 0 or self.eta_follower <= 0:
            raise ValueError("step sizes must be positive")
        if self.update_mode not in ("alternating", "simultaneous"):
            raise ValueError(f"unknown update mode {self.update_mode!r}")


@dataclass(frozen=True)
class SolverKind:
    name: str
    k: int = 1

    def __post_init__(self):
        if self.name not in ("GD", "KGD", "UGD", "TGD", "FR", "GDN"):
            raise ValueError(f"unknown solver {self.name!r}")
        if self.name in ("KGD", "UGD") and self.k < 1:
            raise ValueError("k must be >= 1 for KGD/UGD")


class Leader:
    """Leader loss surface: value plus gradients in both blocks."""

    def value(self, x, w) -> float:
        raise NotImplementedError

    def grad_x(self, x, w) -> np.ndarray:
        raise NotImplementedError

    def grad_w(self, x, w) -> np.ndarray:
        raise NotImplementedError


class Follower:
    """Follower loss surface: gradient, Hessian products, mixed blocks.

    mixed_vjp(x, w, v) is grad_x( grad_w f . v ); mixed_jvp(x, w, u) is the
    adjoint direction d/dt grad_w f(x + t u, w). The jvp default falls back to
    central differences of grad_w (only FR needs it).
    """

    def value(self, x, w) -> float:
        raise NotImplementedError

    def grad_w(self, x, w) -> np.ndarray:
        raise NotImplementedError

    def hvp_ww(self, x, w, v) -> np.ndarray:
        raise NotImplementedError

    def mixed_vjp(self, x, w, v) -> np.ndarray:
        raise NotImplementedError

    def mixed_jvp(self, x, w, u, h: float = 1e-6) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        return (self.grad_w(x + h * u, w) - self.grad_w(x - h * u, w)) / (2 * h)


class QuadraticLeader(Leader):
    """F(x, w) = 1/2 w' P w + p'w + 1/2 x' Q x + q'x + w' R x."""

    def __init__(self, P, p, Q, q, R):
        self.P, self.p, self.Q, self.q, self.R = (np.asarray(a, dtype=np.float64)
                                                  for a in (P, p, Q, q, R))

    def value(self, x, w):
        return float(0.5 * w @ self.P @ w + self.p @ w
                     + 0.5 * x @ self.Q @ x + self.q @ x + w @ self.R @ x)

    def grad_x(self, x, w):
        return self.Q @ x + self.q + self.R.T @ w

    def grad_w(self, x, w):
        return self.P @ w + self.p + self.R @ x


class QuadraticFollower(Follower):
    """f(x, w) = 1/2 w' A w + w' B x + a'w, with A positive definite."""

    def __init__(self, A, B, a):
        self.A, self.B, self.a = (np.asarray(m, dtype=np.float64) for m in (A, B, a))

    def value(self, x, w):
        return float(0.5 * w @ self.A @ w + w @ self.B @ x + self.a @ w)

    def grad_w(self, x, w):
        return self.A @ w + self.B @ x + self.a

    def hvp_ww(self, x, w, v):
        return self.A @ v

    def mixed_vjp(self, x, w, v):
        return self.B.T @ v

    def mixed_jvp(self, x, w, u, h=None):
        return self.B @ u

    def best_response(self, x):
        return np.linalg.solve(self.A, -(self.B @ x + self.a))


def _finite(v, what):
    if not np.all(np.isfinite(v)):
        raise NonFiniteGradient(f"{what} is non-finite")
    return v


def _follower_gd(state: GameState, f: Follower, k: int) -> np.ndarray:
    w = state.w.copy()
    for _ in range(k):
        w = w - state.eta_follower * _finite(f.grad_w(state.x, w), "follower gradient")
    return w


class TotalDerivative(NamedTuple):
    d_x: np.ndarray
    cg_converged: bool
    cg_iters: int


def total_derivative(x, w, F: Leader, f: Follower,
                     cg_cfg: CgConfig = CgConfig()) -> TotalDerivative:
    """D_x = grad_x F - mixed_vjp(H_ww^-1 grad_w F).

    The inverse-Hessian product is computed matrix-free with damped CG; when
    CG hits its cap the best iterate is used and flagged.
    """
    gw = _finite(F.grad_w(x, w), "leader grad_w")
    res = cg_solve(lambda v: f.hvp_ww(x, w, v), gw, cg_cfg)
    d_x = _finite(F.grad_x(x, w), "leader grad_x") - f.mixed_vjp(x, w, res.x)
    return TotalDerivative(d_x, res.converged, res.iters)


def unrolled_leader_grad(F: Leader, f: Follower, x, w, k: int, eta_f: float) -> np.ndarray:
    """grad_x of F(x, W^[k](x, w)) by reverse-mode through the k follower steps.

    W(x, w) = w - eta_f grad_w f(x, w); each reverse step pulls the cotangent
    through dW/dw = I - eta_f H_ww and accumulates -eta_f * mixed_vjp into the
    x block. k = 0 degenerates to plain grad_x F.
    """
    trail = [np.asarray(w, dtype=np.float64).copy()]
    for _ in range(k):
        trail.append(trail[-1] - eta_f * _finite(f.grad_w(x, trail[-1]), "follower gradient"))
    g_w = _finite(F.grad_w(x, trail[-1]), "leader grad_w")
    g_x = _finite(F.grad_x(x, trail[-1]), "leader grad_x")
    for i in range(k - 1, -1, -1):
        g_x = g_x - eta_f * f.mixed_vjp(x, trail[i], g_w)
        g_w = g_w - eta_f * f.hvp_ww(x, trail[i], g_w)
    return g_x


def step_gd(state: GameState, F: Leader, f: Follower) -> GameState:
    w_next = _follower_gd(state, f, 1)
    w_tilde = w_next if state.update_mode == "alternating" else state.w
    state.x = state.x - state.eta_leader * _finite(F.grad_x(state.x, w_tilde), "leader grad_x")
    state.w = w_next
    state.t += 1
    return state


def step_kgd(state: GameState, F: Leader, f: Follower, k: int) -> GameState:
    w_next = _follower_gd(state, f, k)
    w_tilde = w_next if state.update_mode == "alternating" else state.w
    state.x = state.x - state.eta_leader * _finite(F.grad_x(state.x, w_tilde), "leader grad_x")
    state.w = w_next
    state.t += 1
    return state


def step_ugd(state: GameState, F: Leader, f: Follower, k: int) -> GameState:
    w_next = _follower_gd(state, f, 1)
    w_tilde = w_next if state.update_mode == "alternating" else state.w
    g = unrolled_leader_grad(F, f, state.x, w_tilde, k, state.eta_follower)
    state.x = state.x - state.eta_leader * g
    state.w = w_next
    state.t += 1
    return state


def step_tgd(state: GameState, F: Leader, f: Follower,
             cg_cfg: CgConfig = CgConfig()) -> GameState:
    w_next = _follower_gd(state, f, 1)
    w_tilde = w_next if state.update_mode == "alternating" else state.w
    td = total_derivative(state.x, w_tilde, F, f, cg_cfg)
    state.x = state.x - state.eta_leader * td.d_x
    state.w = w_next
    state.t += 1
    return state


def step_fr(state: GameState, F: Leader, f: Follower,
            cg_cfg: CgConfig = CgConfig()) -> GameState:
    """Follow-the-ridge: the follower gets a curvature correction that keeps
    it on the ridge the leader is walking."""
    x, w = state.x, state.w
    td_here = total_derivative(x, w, F, f, cg_cfg)
    correction = cg_solve(lambda v: f.hvp_ww(x, w, v),
                          f.mixed_jvp(x, w, td_here.d_x), cg_cfg).x
    w_next = (w - state.eta_follower * _finite(f.grad_w(x, w), "follower gradient")
              + state.eta_follower * correction)
    w_tilde = w_next if state.update_mode == "alternating" else w
    td = total_derivative(x, w_tilde, F, f, cg_cfg)
    state.x = x - state.eta_leader * td.d_x
    state.w = w_next
    state.t += 1
    return state


def step_gdn(state: GameState, F: Leader, f: Follower,
             cg_cfg: CgConfig = CgConfig()) -> GameState:
    """Gradient descent Newton: the follower takes a (CG-damped) Newton step."""
    x, w = state.x, state.w
    newton = cg_solve(lambda v: f.hvp_ww(x, w, v),
                      _finite(f.grad_w(x, w), "follower gradient"), cg_cfg).x
    w_next = w - state.eta_follower * newton
    w_tilde = w_next if state.update_mode == "alternating" else w
    td = total_derivative(x, w_tilde, F, f, cg_cfg)
    state.x = x - state.eta_leader * td.d_x
    state.w = w_next
    state.t += 1
    return state


def step(state: GameState, F: Leader, f: Follower, solver: SolverKind,
         cg_cfg: CgConfig = CgConfig()) -> GameState:
    if solver.name == "GD":
        return step_gd(state, F, f)
    if solver.name == "KGD":
        return step_kgd(state, F, f, solver.k)
    if solver.name == "UGD":
        return step_ugd(state, F, f, solver.k)
    if solver.name == "TGD":
        return step_tgd(state, F, f, cg_cfg)
    if solver.name == "FR":
        return step_fr(state, F, f, cg_cfg)
    return step_gdn(state, F, f, cg_cfg)
