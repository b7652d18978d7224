"""Deterministic equivalents of resolvent traces.

For ``H = [h_1, ..., h_n]`` with ``h_a ~ CN(0, Delta_a / M)`` and
``Q = (H H^H + D + alpha I)^-1``::

    tr(A Q) / M       ~  tr(A Gamma) / M
    tr(A Q C Q) / M   ~  tr(A Gamma') / M

where ``Gamma = (sum_a Delta_a / (M (1 + delta_a)) + D + alpha I)^-1`` with
``delta_a = tr(Delta_a Gamma) / M`` and ``Gamma'`` solves the linear system
implemented in :func:`solve_gamma_prime`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """The fixed-point or linear solve did not produce a valid solution."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


def _herm(A):
    return 0.5 * (A + np.swapaxes(A.conj(), -1, -2))


def _check_hermitian(name, A, tol=1e-8):
    A = np.asarray(A)
    scale = max(1.0, float(np.max(np.abs(A))) if A.size else 1.0)
    if np.max(np.abs(A - np.swapaxes(A.conj(), -1, -2)), initial=0.0) > tol * scale:
        raise ValueError(f"{name} must be Hermitian")


@dataclass
class DetEqState:
    Gamma: np.ndarray
    delta: np.ndarray
    M: int
    iterations: int = 0
    residual: float = 0.0
    history: list = field(default_factory=list)


def _gamma_of(delta, Deltas, base, M):
    S = np.einsum("a,amn->mn", 1.0 / (1.0 + delta), Deltas) / M
    return _herm(np.linalg.inv(S + base))


def solve_gamma(Deltas, D, alpha: float, M: int | None = None, tol: float = 1e-10, max_iter: int = 500,
                init: str = "upper", verbose: bool = False) -> DetEqState:
    """Fixed point ``delta_a = tr(Delta_a Gamma(delta)) / M``.

    ``init="upper"`` starts from ``tr(Delta_a)/(M alpha)``, the value at
    ``delta = 0``, which bounds the solution from above; ``init="inv_alpha"``
    starts every ``delta_a`` at ``1/alpha``.  Plain iteration is used while
    the step size shrinks; a step that grows triggers 0.5 damping.  The
    stopping rule is ``max|step| < tol * max(1, max|delta|)``.
    """
    Deltas = np.asarray(Deltas, dtype=complex)
    if Deltas.ndim == 2:
        Deltas = Deltas[None]
    n, M_ = Deltas.shape[0], Deltas.shape[-1]
    M = M_ if M is None else M
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    D = np.zeros((M_, M_)) if D is None else np.asarray(D)
    base = D + alpha * np.eye(M_)
    if n == 0:
        return DetEqState(Gamma=_herm(np.linalg.inv(base)), delta=np.zeros(0), M=M)
    tr_delta = np.real(np.einsum("amm->a", Deltas))
    if init == "upper":
        delta = tr_delta / (M * alpha)
    elif init == "inv_alpha":
        delta = np.full(n, 1.0 / alpha)
    else:
        raise ValueError(f"unknown init {init!r}")
    step_prev = np.inf
    damping = 1.0
    history = []
    for it in range(1, max_iter + 1):
        Gamma = _gamma_of(delta, Deltas, base, M)
        new = np.real(np.einsum("amn,nm->a", Deltas, Gamma)) / M
        step = float(np.max(np.abs(new - delta)))
        history.append(step)
        if verbose:
            log.info("gamma iteration %d residual %.3e", it, step)
        if step < tol * max(1.0, float(np.max(np.abs(new)))):
            Gamma = _gamma_of(new, Deltas, base, M)
            return DetEqState(Gamma=Gamma, delta=new, M=M, iterations=it, residual=step, history=history)
        if step > step_prev and it > 2:
            damping = 0.5
        delta = delta + damping * (new - delta)
        step_prev = step
    raise ConvergenceError(f"fixed point did not converge in {max_iter} iterations", step)


def _y_matrix(Deltas, Gamma, delta, M):
    E = Gamma @ Deltas @ Gamma  # Gamma Delta_a Gamma
    tr_ab = np.real(np.einsum("amn,bnm->ab", Deltas, E))  # tr(Delta_a Gamma Delta_b Gamma)
    return tr_ab / M**2 / (1.0 + delta[None, :]) ** 2, E


def solve_gamma_prime(Deltas, state: DetEqState, C) -> tuple[np.ndarray, np.ndarray]:
    """``(Gamma', delta')`` for one matrix ``C``.

    ``delta' = (I - Y)^-1 x`` with ``Y_ab = tr(Delta_a Gamma Delta_b Gamma) /
    (M^2 (1 + delta_b)^2)`` and ``x_a = tr(Delta_a Gamma C Gamma) / M``;
    ``Gamma' = Gamma C Gamma + Gamma (sum_a Delta_a delta'_a / (1 + delta_a)^2) Gamma / M``.
    """
    Deltas = np.asarray(Deltas, dtype=complex)
    if Deltas.ndim == 2:
        Deltas = Deltas[None]
    G, delta, M = state.Gamma, state.delta, state.M
    C = np.asarray(C)
    GCG = G @ C @ G
    if len(delta) == 0:
        return _herm(GCG), np.zeros(0)
    Y, _ = _y_matrix(Deltas, G, delta, M)
    rho = float(np.max(np.abs(np.linalg.eigvals(Y))))
    if not rho < 1.0:
        raise ConvergenceError("spectral radius of Y is not below one", rho)
    x = np.real(np.einsum("amn,nm->a", Deltas, GCG)) / M
    dprime = np.linalg.solve(np.eye(len(delta)) - Y, x)
    S = np.einsum("a,amn->mn", dprime / (1.0 + delta) ** 2, Deltas)
    return _herm(GCG + G @ S @ G / M), dprime


class DetEq:
    """A solved ``Gamma`` with a factorized ``(I - Y)`` for many ``Gamma'`` traces.

    ``trace_prime(A, Cs)`` returns ``tr(A Gamma'_C)`` for every ``C`` in
    ``Cs`` without forming any ``Gamma'``::

        tr(A Gamma'_C) = tr(C Gamma A Gamma) + u_A . x_C

    where ``u_A`` solves ``(I - Y)^T u = w / (M (1 + delta)^2)``,
    ``w_a = tr(A Gamma Delta_a Gamma)``.
    """

    def __init__(self, Deltas, D, alpha: float, M: int | None = None, tol: float = 1e-10,
                 max_iter: int = 500, init: str = "upper"):
        self.Deltas = np.asarray(Deltas, dtype=complex)
        self.state = solve_gamma(self.Deltas, D, alpha, M, tol=tol, max_iter=max_iter, init=init)
        self.M = self.state.M
        G, delta = self.state.Gamma, self.state.delta
        if len(delta):
            self.Y, self.E = _y_matrix(self.Deltas, G, delta, self.M)
            rho = float(np.max(np.abs(np.linalg.eigvals(self.Y))))
            if not rho < 1.0:
                raise ConvergenceError("spectral radius of Y is not below one", rho)
            self._IY = np.eye(len(delta)) - self.Y
        else:
            self.Y = np.zeros((0, 0))
            self.E = np.zeros((0,) + G.shape)

    @property
    def Gamma(self) -> np.ndarray:
        return self.state.Gamma

    @property
    def delta(self) -> np.ndarray:
        return self.state.delta

    def trace(self, A) -> float:
        """``tr(A Gamma)``."""
        return float(np.real(np.trace(np.asarray(A) @ self.Gamma)))

    def x_vectors(self, Cs) -> np.ndarray:
        """``x_C`` for a stack of ``C`` matrices, shape ``(n_C, n)``."""
        Cs = np.asarray(Cs)
        return np.real(np.einsum("anm,cmn->ca", self.E, Cs)) / self.M

    def trace_prime(self, A, Cs, x: np.ndarray | None = None) -> np.ndarray:
        """``tr(A Gamma'_C)`` for each ``C`` in ``Cs`` (stack ``(n_C, M, M)``)."""
        A = np.asarray(A)
        Cs = np.asarray(Cs)
        G = self.Gamma
        GAG = G @ A @ G
        base = np.real(np.einsum("cmn,nm->c", Cs, GAG))
        if len(self.delta) == 0:
            return base
        if x is None:
            x = self.x_vectors(Cs)
        w = np.real(np.einsum("mn,anm->a", A, self.E))
        u = np.linalg.solve(self._IY.T, w / (self.M * (1.0 + self.delta) ** 2))
        return base + x @ u


def quartic_moment(A, B) -> float:
    """``E|a^H B a|^2`` for ``a ~ CN(0, A)``: ``|tr(BA)|^2 + tr(B A B^H A)``."""
    A = np.asarray(A)
    B = np.asarray(B)
    t = np.trace(B @ A)
    return float(np.abs(t) ** 2 + np.real(np.trace(B @ A @ B.conj().T @ A)))


def rank1_update_check(A, G, g, alpha: float, alpha_p: float = 1.0) -> dict:
    """Residuals of the rank-one update identities on one instance.

    ``rank_one`` is ``|g^H (X + c g g^H)^-1 - g^H X^-1 / (1 + c g^H X^-1 g)|``
    (max entry) with ``X = G + alpha I``; ``perturbation`` is the trace
    difference that must stay below ``bound = ||A|| / alpha``.
    """
    A, G, g = np.asarray(A), np.asarray(G), np.asarray(g)
    M = G.shape[0]
    X = G + alpha * np.eye(M)
    Xg = X + alpha_p * np.outer(g, g.conj())
    Xi = np.linalg.inv(X)
    Xgi = np.linalg.inv(Xg)
    lhs = g.conj() @ Xgi
    rhs = (g.conj() @ Xi) / (1.0 + alpha_p * (g.conj() @ Xi @ g))
    rank_one = float(np.max(np.abs(lhs - rhs), initial=0.0))
    diff = float(np.abs(np.trace(A @ Xi - A @ Xgi)))
    bound = float(np.linalg.norm(A, 2)) / alpha
    return {"rank_one": rank_one, "perturbation": diff, "bound": bound, "holds": diff <= bound * (1 + 1e-12)}
