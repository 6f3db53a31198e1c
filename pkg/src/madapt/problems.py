"""Builtin test problems and a registry for custom ones."""

from __future__ import annotations

from typing import Callable, Dict

import numpy as np

from .core import OdeProblem

_REGISTRY: Dict[str, Callable[..., OdeProblem]] = {}


def register_problem(name: str, factory: Callable[..., OdeProblem] = None):
    """Register ``factory(T=..., **params) -> OdeProblem`` under ``name``; usable as a decorator."""
    def deco(fn):
        _REGISTRY[name] = fn
        return fn

    return deco(factory) if factory is not None else deco


def get_problem(name: str, **params) -> OdeProblem:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; available: {', '.join(sorted(_REGISTRY))}") from None
    return factory(**{k: v for k, v in params.items() if v is not None})


def available_problems():
    return sorted(_REGISTRY)


def default_ratios(name, dimension):
    """Step ratios used when none are given: the test6 multirate pattern, otherwise equal steps."""
    return TEST6_RATIOS if name == "test6" else (1.0,) * dimension


def linear_problem(A, u0, T, exact=None, name="linear"):
    """``u' = A u`` with vectorized right-hand side and constant Jacobian."""
    A = np.array(A, dtype=float)

    def rhs(u, t):
        return A @ u

    def jac(u, t):
        if np.ndim(u) == 1:
            return A.copy()
        return np.broadcast_to(A, (np.shape(u)[1],) + A.shape).copy()

    return OdeProblem(rhs, u0, T, jacobian=jac, lipschitz_hint=float(np.linalg.norm(A, 2)),
                      vectorized=True, exact=exact, name=name)


TEST6_MATRIX = np.array([
    [0, 1, 0, 0, 0, 0],
    [-1, 0, 0, 0, 0, 0],
    [0, -1, 0, 2, 0, 0],
    [1, 0, -2, 0, 0, 0],
    [0, -1, 0, -2, 0, 4],
    [1, 0, 2, 0, -4, 0],
], dtype=float)

TEST6_RATIOS = (1.0, 1.0, 0.5, 0.5, 0.25, 0.25)


def oscillators_exact(t):
    t = np.asarray(t, dtype=float)
    s1, c1 = np.sin(t), np.cos(t)
    s2, c2 = np.sin(2 * t), np.cos(2 * t)
    s4, c4 = np.sin(4 * t), np.cos(4 * t)
    return np.array([s1, c1, s1 + s2, c1 + c2, s1 + s2 + s4, c1 + c2 + c4])


@register_problem("test6")
def oscillators(T=1.0):
    """Six coupled oscillators with frequencies 1, 2 and 4."""
    return linear_problem(TEST6_MATRIX, [0, 1, 0, 2, 0, 3], T, exact=oscillators_exact, name="test6")


@register_problem("decay")
def decay(T=1.0, lam=1.0, u0=1.0):
    """Scalar ``u' = -lam u``."""
    def exact(t):
        return u0 * np.exp(-lam * np.atleast_1d(np.asarray(t, dtype=float)))[None, :]

    return linear_problem([[-lam]], [u0], T, exact=exact, name="decay")


@register_problem("const")
def const(T=1.0, c=(1.0, -2.0), u0=None):
    """``u' = c`` with exact linear solution and zero Jacobian."""
    c = np.atleast_1d(np.asarray(c, dtype=float))
    u0 = np.zeros_like(c) if u0 is None else np.asarray(u0, dtype=float)

    def rhs(u, t):
        return np.broadcast_to(c.reshape((-1,) + (1,) * (np.ndim(u) - 1)), np.shape(u)).copy()

    def jac(u, t):
        n = c.size
        return np.zeros((n, n)) if np.ndim(u) == 1 else np.zeros((np.shape(u)[1], n, n))

    def exact(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return u0[:, None] + c[:, None] * t[None, :]

    return OdeProblem(rhs, u0, T, jacobian=jac, lipschitz_hint=0.0, vectorized=True, exact=exact,
                      name="const")
