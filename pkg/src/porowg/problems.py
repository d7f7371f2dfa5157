"""Benchmark forcing terms and manufactured solutions on the unit square/cube.

All fields take points of shape ``(n, d)`` and return ``(n, d)`` for vector
fields or ``(n,)`` for scalars.  Time-dependent fields are returned as
closures over ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy import cos, pi, sin

from .wgfem import PhysicalParams

Field = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ElasticityProblem:
    dim: int
    f: Field
    u_exact: Field | None = None
    grad_u_exact: Field | None = None

    @property
    def boundary(self) -> Field | None:
        return self.u_exact


@dataclass(frozen=True)
class PoroProblem:
    dim: int
    f: Callable[[float], Field]
    s: Callable[[float], Field]
    u_exact: Callable[[float], Field] | None = None
    p_exact: Callable[[float], Field] | None = None
    grad_u_exact: Callable[[float], Field] | None = None


def elasticity_2d(params: PhysicalParams) -> ElasticityProblem:
    """``u = (sin x sin y, cos x cos y)``; divergence free, nonzero on the boundary."""
    mu = params.mu

    def f(x):
        return 2.0 * mu * np.column_stack([sin(x[:, 0]) * sin(x[:, 1]), cos(x[:, 0]) * cos(x[:, 1])])

    def u(x):
        return np.column_stack([sin(x[:, 0]) * sin(x[:, 1]), cos(x[:, 0]) * cos(x[:, 1])])

    def grad_u(x):
        X, Y = x[:, 0], x[:, 1]
        # rows are components, columns derivatives
        return np.stack([
            np.column_stack([cos(X) * sin(Y), sin(X) * cos(Y)]),
            np.column_stack([-sin(X) * cos(Y), -cos(X) * sin(Y)]),
        ], axis=1)

    return ElasticityProblem(2, f, u, grad_u)


def elasticity_3d(params: PhysicalParams) -> ElasticityProblem:
    mu, lam = params.mu, params.lam
    c = (4.0 * mu + lam) / (lam + mu)

    def f(x):
        X, Y, Z = pi * x[:, 0], pi * x[:, 1], pi * x[:, 2]
        sss = sin(X) * sin(Y) * sin(Z)
        f1 = (c * pi**2 * sss
              + 8 * pi**2 * mu * (-1 + cos(2 * X)) * sin(2 * Y) * sin(2 * Z)
              + 4 * pi**2 * mu * cos(2 * X) * sin(2 * Y) * sin(2 * Z)
              - pi**2 * (cos(X) * cos(Y) * sin(Z) + cos(X) * sin(Y) * cos(Z)))
        f2 = (c * pi**2 * sss
              + 16 * pi**2 * mu * sin(2 * X) * (1 - cos(2 * Y)) * sin(2 * Z)
              - 8 * pi**2 * mu * sin(2 * X) * cos(2 * Y) * sin(2 * Z)
              - pi**2 * (cos(X) * cos(Y) * sin(Z) + sin(X) * cos(Y) * cos(Z)))
        f3 = (c * pi**2 * sss
              + 8 * pi**2 * mu * sin(2 * X) * sin(2 * Y) * (-1 + cos(2 * Z))
              + 4 * pi**2 * mu * sin(2 * X) * sin(2 * Y) * cos(2 * Z)
              - pi**2 * (cos(X) * sin(Y) * cos(Z) + sin(X) * cos(Y) * cos(Z)))
        return np.column_stack([f1, f2, f3])

    return ElasticityProblem(3, f)


def poro_2d(params: PhysicalParams, profile: tuple[Callable, Callable] | None = None) -> PoroProblem:
    """Manufactured Biot solution, zero on the boundary:

    ``u = g(t) (sin 2pi y (cos 2pi x - 1) + S/(mu+lam), sin 2pi x (1 - cos 2pi y) + S/(mu+lam))``,
    ``p = -g(t) S`` with ``S = sin pi x sin pi y``.

    ``profile = (g, g')`` defaults to ``g(t) = t``.
    """
    mu, lam, alpha, c0, kappa = params.mu, params.lam, params.alpha, params.c0, params.kappa
    lm = lam + mu
    g, dg = profile or ((lambda t: t), (lambda t: 1.0))

    def f(t):
        def field(x):
            X, Y = pi * x[:, 0], pi * x[:, 1]
            S = sin(X) * sin(Y)
            f1 = (-8 * pi**2 * mu * cos(2 * X) * sin(2 * Y) - 2 * pi**2 * mu / lm * S
                  + 4 * pi**2 * mu * sin(2 * Y) + pi**2 * cos(X + Y) + alpha * pi * cos(X) * sin(Y))
            f2 = (8 * pi**2 * mu * sin(2 * X) * cos(2 * Y) - 2 * pi**2 * mu / lm * S
                  - 4 * pi**2 * mu * sin(2 * X) + pi**2 * cos(X + Y) + alpha * pi * sin(X) * cos(Y))
            return -g(t) * np.column_stack([f1, f2])
        return field

    def s(t):
        def field(x):
            X, Y = pi * x[:, 0], pi * x[:, 1]
            S = sin(X) * sin(Y)
            return dg(t) * (-c0 * S + pi * alpha / lm * sin(X + Y)) - g(t) * kappa * 2 * pi**2 * S
        return field

    def u(t):
        def field(x):
            X, Y = pi * x[:, 0], pi * x[:, 1]
            S = sin(X) * sin(Y) / lm
            return g(t) * np.column_stack([sin(2 * Y) * (cos(2 * X) - 1) + S, sin(2 * X) * (1 - cos(2 * Y)) + S])
        return field

    def p(t):
        return lambda x: -g(t) * sin(pi * x[:, 0]) * sin(pi * x[:, 1])

    def grad_u(t):
        def field(x):
            X, Y = pi * x[:, 0], pi * x[:, 1]
            sx = pi * cos(X) * sin(Y) / lm
            sy = pi * sin(X) * cos(Y) / lm
            g11 = -2 * pi * sin(2 * Y) * sin(2 * X) + sx
            g12 = 2 * pi * cos(2 * Y) * (cos(2 * X) - 1) + sy
            g21 = 2 * pi * cos(2 * X) * (1 - cos(2 * Y)) + sx
            g22 = 2 * pi * sin(2 * X) * sin(2 * Y) + sy
            return g(t) * np.stack([np.column_stack([g11, g12]), np.column_stack([g21, g22])], axis=1)
        return field

    return PoroProblem(2, f, s, u, p, grad_u)


def poro_3d(params: PhysicalParams) -> PoroProblem:
    mu, lam, alpha, c0, kappa = params.mu, params.lam, params.alpha, params.c0, params.kappa
    lm = lam + mu
    c = (4 * mu + lam) / lm

    def f(t):
        def field(x):
            X, Y, Z = pi * x[:, 0], pi * x[:, 1], pi * x[:, 2]
            sss = sin(X) * sin(Y) * sin(Z)
            f1 = (4 * mu * cos(2 * X) * sin(2 * Y) * sin(2 * Z) * pi**2 + c * sss * pi**2
                  - cos(X) * cos(Y) * sin(Z) * pi**2 - cos(X) * sin(Y) * cos(Z) * pi**2
                  + 8 * pi**2 * mu * (-1 + cos(2 * X)) * sin(2 * Y) * sin(2 * Z)
                  + alpha * pi * cos(X) * sin(Y) * sin(Z))
            f2 = (-pi**2 * cos(X) * cos(Y) * sin(Z) + c * sss * pi**2
                  - sin(X) * cos(Y) * cos(Z) * pi**2
                  + 16 * pi**2 * mu * sin(2 * X) * (1 - cos(2 * Y)) * sin(2 * Z)
                  - 8 * pi**2 * mu * sin(2 * X) * cos(2 * Y) * sin(2 * Z)
                  + alpha * pi * sin(X) * cos(Y) * sin(Z))
            f3 = (c * sss * pi**2 + 4 * pi**2 * mu * sin(2 * X) * sin(2 * Y) * cos(2 * Z)
                  - cos(X) * sin(Y) * cos(Z) * pi**2 - sin(X) * cos(Y) * cos(Z) * pi**2
                  + 8 * pi**2 * mu * (-1 + cos(2 * Z)) * sin(2 * X) * sin(2 * Y)
                  + alpha * pi * sin(X) * sin(Y) * cos(Z))
            return t * np.column_stack([f1, f2, f3])
        return field

    def s(t):
        def field(x):
            X, Y, Z = pi * x[:, 0], pi * x[:, 1], pi * x[:, 2]
            return (alpha * pi / lm * (cos(X) * sin(Y) * sin(Z) + sin(X) * cos(Y) * sin(Z)
                                       + sin(X) * sin(Y) * cos(Z))
                    + (3 * pi**2 * t * kappa + c0) * sin(X) * sin(Y) * sin(Z))
        return field

    return PoroProblem(3, f, s)


def elasticity_problem(params: PhysicalParams, dim: int) -> ElasticityProblem:
    return {2: elasticity_2d, 3: elasticity_3d}[dim](params)


def poro_problem(params: PhysicalParams, dim: int) -> PoroProblem:
    return {2: poro_2d, 3: poro_3d}[dim](params)
