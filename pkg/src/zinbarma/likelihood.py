"""Partial log-likelihood, analytic score and observed information."""

from __future__ import annotations

import math

import numpy as np

from . import _kernel
from .model import ModelError, ParameterSet, ParamLayout, _check_dims


class LikelihoodError(ArithmeticError):
    """Non-finite likelihood or derivative."""

    def __init__(self, msg, t=None):
        super().__init__(msg if t is None else f"{msg} (first offending t = {t + 1})")
        self.t = t


def digamma(x: float) -> float:
    return float(_kernel.digamma(float(x)))


class Evaluator:
    """Likelihood machinery bound to one design and series.

    Vectors passed to the methods follow ``layout``; with ``log_k=True`` the
    last entry is ``log k`` and derivatives are taken with respect to it.
    """

    def __init__(self, layout: ParamLayout, X, U, y):
        self.layout = layout
        self.X = np.ascontiguousarray(X, dtype=float)
        self.U = np.ascontiguousarray(U, dtype=float)
        self.y = np.ascontiguousarray(y, dtype=np.int64)
        n = self.y.size
        if self.X.shape != (n, layout.n1) or self.U.shape != (n, layout.n2):
            raise ModelError(
                f"design shapes X{self.X.shape}, U{self.U.shape} do not match layout (n1={layout.n1}, n2={layout.n2}) and N={n}"
            )
        self.zi = layout.n2 > 0
        self._buf = {name: np.zeros(n) for name in ("W", "M", "Z", "V", "e", "lam", "pi", "ll_t")}
        self._grad = np.zeros(layout.size)
        self._flags = np.zeros(2, dtype=np.int64)
        self._none_s = np.zeros(n)
        self._slot_masks = [a >= 0 for a in layout.slot_indices]
        self._no_idx = tuple(np.full(a.size, -1, np.int64) for a in layout.slot_indices)
        self._no_grad = np.zeros(0)
        self._no_rows = np.zeros((0, 0))
        self.n_evals = 0

    @property
    def n(self) -> int:
        return self.y.size

    def _split(self, vec, log_k):
        lay = self.layout
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (lay.size,):
            raise ModelError(f"expected parameter vector of length {lay.size}, got {vec.shape}")
        blocks = []
        for slots, mask in zip(lay.slot_indices, self._slot_masks):
            arr = np.zeros(slots.size)
            arr[mask] = vec[slots[mask]]
            blocks.append(arr)
        k = math.exp(vec[-1]) if log_k else float(vec[-1])
        if not (k > 0 and math.isfinite(k)):
            raise LikelihoodError(f"invalid overdispersion k = {k}")
        beta = np.ascontiguousarray(vec[: lay.n1])
        delta = np.ascontiguousarray(vec[lay.delta_offset : lay.delta_offset + lay.n2])
        return beta, blocks[0], blocks[1], delta, blocks[2], blocks[3], k

    def _run(self, vec, log_k, need_grad, s_hat=None, grad_t=None):
        beta, phi, theta, delta, alpha, gamma, k = self._split(vec, log_k)
        b = self._buf
        P = self.layout.size if need_grad else 0
        idx = self.layout.slot_indices if need_grad else self._no_idx
        self.n_evals += 1
        total = _kernel.run(
            beta, phi, theta, delta, alpha, gamma, k,
            self.X, self.U, self.y, self.zi, *idx, P,
            self._none_s if s_hat is None else s_hat, s_hat is not None,
            b["W"], b["M"], b["Z"], b["V"], b["e"], b["lam"], b["pi"], b["ll_t"],
            self._grad if need_grad else self._no_grad, self._flags,
            self._no_rows if grad_t is None else grad_t,
        )
        if not math.isfinite(total):
            bad = np.flatnonzero(~np.isfinite(b["ll_t"]))
            raise LikelihoodError("non-finite log-likelihood", int(bad[0]) if bad.size else None)
        g = None
        if need_grad:
            g = self._grad.copy()
            if log_k:
                g[-1] *= k
            if not np.all(np.isfinite(g)):
                raise LikelihoodError("non-finite score")
        return total, g

    def loglik(self, vec, log_k=False) -> float:
        return self._run(vec, log_k, False)[0]

    def loglik_grad(self, vec, log_k=False):
        return self._run(vec, log_k, True)

    def per_obs(self, vec, log_k=False) -> np.ndarray:
        self._run(vec, log_k, False)
        return self._buf["ll_t"].copy()

    def score_contributions(self, vec) -> np.ndarray:
        """Per-observation score rows (N x P, natural ``k``); rows sum to the score."""
        rows = np.zeros((self.n, self.layout.size))
        self._run(vec, False, True, None, rows)
        if not np.all(np.isfinite(rows)):
            raise LikelihoodError("non-finite score contributions")
        return rows

    def opg_information(self, vec) -> np.ndarray:
        """Outer product of the per-observation scores, sum_t s_t s_t'."""
        rows = self.score_contributions(vec)
        return rows.T @ rows

    def q_value(self, vec, s_hat, log_k=False) -> float:
        return self._run(vec, log_k, False, s_hat)[0]

    def q_grad(self, vec, s_hat, log_k=False):
        return self._run(vec, log_k, True, s_hat)

    def posterior_zero(self, vec, log_k=False) -> np.ndarray:
        """E-step weights: posterior probability of the zero state."""
        p = self.layout.unpack(vec, log_k=log_k)
        self._run(vec, log_k, False)
        if not self.zi:
            return np.zeros(self.n)
        lam, pi = self._buf["lam"], self._buf["pi"]
        s = np.zeros(self.n)
        z = self.y == 0
        nb0 = np.exp(p.k * (math.log(p.k) - np.log(p.k + lam[z])))
        num = pi[z]
        s[z] = num / (num + (1.0 - pi[z]) * nb0)
        return s

    def hessian(self, vec, log_k=False, s_hat=None) -> np.ndarray:
        """Central differences of the analytic gradient, symmetrized."""
        vec = np.asarray(vec, dtype=float)
        P = vec.size
        H = np.empty((P, P))
        for i in range(P):
            h = max(1e-5, 1e-5 * abs(vec[i]))
            vp = vec.copy()
            vm = vec.copy()
            vp[i] += h
            vm[i] -= h
            if s_hat is None:
                gp = self.loglik_grad(vp, log_k)[1]
                gm = self.loglik_grad(vm, log_k)[1]
            else:
                gp = self.q_grad(vp, s_hat, log_k)[1]
                gm = self.q_grad(vm, s_hat, log_k)[1]
            H[:, i] = (gp - gm) / (2.0 * h)
        H = 0.5 * (H + H.T)
        if not np.all(np.isfinite(H)):
            raise LikelihoodError("non-finite entries in the Hessian")
        return H


def _evaluator(params: ParameterSet, X, U, y, layout: ParamLayout | None) -> Evaluator:
    X, U, y = _check_dims(params, X, U, y)
    layout = layout or ParamLayout.full(params)
    return Evaluator(layout, X, U, y)


def partial_loglik(params: ParameterSet, X, U, y) -> float:
    """Sum over t of the log conditional pmf of ``y_t`` given its history."""
    ev = _evaluator(params, X, U, y, None)
    return ev.loglik(ev.layout.pack(params))


def per_observation_loglik(params: ParameterSet, X, U, y) -> np.ndarray:
    ev = _evaluator(params, X, U, y, None)
    return ev.per_obs(ev.layout.pack(params))


def score(params: ParameterSet, X, U, y, layout: ParamLayout | None = None) -> np.ndarray:
    """Gradient of the partial log-likelihood with respect to ``(nu, k)``.

    With ``layout`` given, entries follow the layout's free parameters;
    otherwise every ARMA slot is treated as free.
    """
    ev = _evaluator(params, X, U, y, layout)
    return ev.loglik_grad(ev.layout.pack(params))[1]


def observed_information(params: ParameterSet, X, U, y, layout: ParamLayout | None = None) -> np.ndarray:
    """Negative Hessian of the partial log-likelihood in ``(nu, k)``."""
    ev = _evaluator(params, X, U, y, layout)
    return -ev.hessian(ev.layout.pack(params))
