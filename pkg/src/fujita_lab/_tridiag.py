"""Compiled tridiagonal kernels for the backward-Euler diffusion step.

The systems are M-matrices, so the Thomas recursion involves no cancellation
and preserves nonnegativity of the right-hand side.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def factor(sub, diag, sup):
    n = diag.shape[0]
    cp = np.empty(n)
    inv = np.empty(n)
    inv[0] = 1.0 / diag[0]
    cp[0] = sup[0] * inv[0]
    for i in range(1, n):
        den = diag[i] - sub[i] * cp[i - 1]
        inv[i] = 1.0 / den
        cp[i] = sup[i] * inv[i]
    return cp, inv


@njit(cache=True)
def solve_steps(sub, cp, inv, u, nsteps):
    """Apply ``nsteps`` factored solves in place-free fashion."""
    n = u.shape[0]
    x = u.copy()
    d = np.empty(n)
    for _ in range(nsteps):
        d[0] = x[0] * inv[0]
        for i in range(1, n):
            d[i] = (x[i] - sub[i] * d[i - 1]) * inv[i]
        x[n - 1] = d[n - 1]
        for i in range(n - 2, -1, -1):
            x[i] = d[i] - cp[i] * x[i + 1]
    return x


@njit(cache=True)
def solve_steps_many(sub, cp, inv, U, nsteps):
    """Same as ``solve_steps`` for every column of ``U`` (shape n x k)."""
    n, k = U.shape
    X = U.copy()
    d = np.empty(n)
    for j in range(k):
        for _ in range(nsteps):
            d[0] = X[0, j] * inv[0]
            for i in range(1, n):
                d[i] = (X[i, j] - sub[i] * d[i - 1]) * inv[i]
            X[n - 1, j] = d[n - 1]
            for i in range(n - 2, -1, -1):
                X[i, j] = d[i] - cp[i] * X[i + 1, j]
    return X


@njit(cache=True)
def solve_once(sub, diag, sup, rhs):
    cp, inv = factor(sub, diag, sup)
    return solve_steps(sub, cp, inv, rhs, 1)
