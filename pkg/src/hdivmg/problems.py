"""Benchmark data: manufactured solution, lid-driven cavity, backward step."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Rectangle, StepDomain, build_structured_mesh


def _phi(x):
    return x ** 2 * (x - 1) ** 2


def _dphi(x):
    return 4 * x ** 3 - 6 * x ** 2 + 2 * x


def _ddphi(x):
    return 12 * x ** 2 - 12 * x + 2


def _dddphi(x):
    return 24 * x - 12


@dataclass(frozen=True)
class Manufactured:
    """Stream-function solution on the unit square with zero boundary data.

    ``u = (-phi(x) phi'(y), phi'(x) phi(y))``, ``phi = x^2 (x-1)^2``,
    ``p = x(1-x)(1-y) - 1/12``.  ``amplitude`` scales the velocity, which
    strengthens the convection term relative to viscosity.
    """

    nu: float = 1.0
    beta: float = 0.0
    convection: bool = False
    amplitude: float = 1.0

    def u(self, x, y):
        return self.amplitude * np.stack([-_phi(x) * _dphi(y), _dphi(x) * _phi(y)])

    def grad_u(self, x, y):
        """``(2, 2, n)`` array ``d u_r / d x_c``."""
        return self.amplitude * np.stack([
            np.stack([-_dphi(x) * _dphi(y), -_phi(x) * _ddphi(y)]),
            np.stack([_ddphi(x) * _phi(y), _dphi(x) * _dphi(y)]),
        ])

    def L(self, x, y):
        return -self.nu * self.grad_u(x, y)

    def p(self, x, y):
        return x * (1 - x) * (1 - y) - 1.0 / 12.0

    def f(self, x, y):
        lap = np.stack([
            -_ddphi(x) * _dphi(y) - _phi(x) * _dddphi(y),
            _dddphi(x) * _phi(y) + _dphi(x) * _ddphi(y),
        ])
        gp = np.stack([(1 - 2 * x) * (1 - y), -x * (1 - x)])
        out = -self.nu * self.amplitude * lap + self.beta * self.u(x, y) + gp
        if self.convection:
            out = out + np.einsum("rcn,cn->rn", self.grad_u(x, y), self.u(x, y))
        return out

    def mesh(self, n=2):
        return build_structured_mesh(Rectangle(), n)

    bc = None


def cavity_bc(x, y):
    """``[4x(1-x), 0]`` on the lid ``y = 1``, zero elsewhere."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lid = np.abs(y - 1.0) < 1e-12
    return np.stack([np.where(lid, 4 * x * (1 - x), 0.0), np.zeros_like(x)])


def step_bc(x, y):
    """Inflow ``[16(1-y)(y-0.5), 0]`` at ``x = 0``, no-slip on the walls."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    inlet = np.abs(x) < 1e-12
    return np.stack([np.where(inlet, 16 * (1 - y) * (y - 0.5), 0.0), np.zeros_like(x)])


def cavity_mesh(n=2):
    return build_structured_mesh(Rectangle(), n)


def step_mesh(n=2):
    return build_structured_mesh(StepDomain(), n)
