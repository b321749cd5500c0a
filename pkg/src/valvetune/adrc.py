"""Linear ADRC: extended state observer plus saturated state feedback.

The nominal model is ``x1' = x2, x2' = a1*x1 + a2*x2 + b*u``.  All
unmodelled dynamics and disturbances are lumped into a third state ``psi``
(assumed constant by the observer) and cancelled through the input::

    u = sat(K @ xhat + v*r - psihat/b)

Observer and feedback gains come from closed-form pole placement: a triple
observer pole and a double controller pole.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import expm

from .paramspace import PoleSpec

DT = 1e-3


class SynthesisError(ValueError):
    pass


@dataclass(frozen=True)
class AdrcDesign:
    a1: float
    a2: float
    b: float
    L: tuple[float, float, float]
    K: tuple[float, float]
    v: float
    p_obs: float
    p_ctr: float
    dt: float = DT

    def extended_matrices(self):
        A = np.array([[0.0, 1.0, 0.0], [self.a1, self.a2, 1.0], [0.0, 0.0, 0.0]])
        B = np.array([0.0, self.b, 0.0])
        C = np.array([1.0, 0.0, 0.0])
        return A, B, C

    def nominal_matrices(self):
        A = np.array([[0.0, 1.0], [self.a1, self.a2]])
        B = np.array([0.0, self.b])
        return A, B

    def observer_matrix(self) -> np.ndarray:
        A, _, C = self.extended_matrices()
        return A - np.outer(self.L, C)

    def closed_loop_matrix(self) -> np.ndarray:
        A, B = self.nominal_matrices()
        return A + np.outer(B, self.K)

    def dc_gain(self) -> float:
        """Nominal steady-state gain from reference to output."""
        A, B = self.nominal_matrices()
        x = np.linalg.solve(-self.closed_loop_matrix(), B * self.v)
        return float(x[0])

    def discretize(self):
        """Zero-order-hold observer update ``z' = Ad z + bu*u + by*y``."""
        M = self.observer_matrix()
        _, B, _ = self.extended_matrices()
        aug = np.zeros((5, 5))
        aug[:3, :3] = M
        aug[:3, 3] = B
        aug[:3, 4] = self.L
        E = expm(aug * self.dt)
        return E[:3, :3], E[:3, 3], E[:3, 4]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _char_poly3(M: np.ndarray) -> np.ndarray:
    """Coefficients (c2, c1, c0) of det(sI - M) = s^3 + c2 s^2 + c1 s + c0."""
    c2 = -np.trace(M)
    c1 = (M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
          + M[0, 0] * M[2, 2] - M[0, 2] * M[2, 0]
          + M[1, 1] * M[2, 2] - M[1, 2] * M[2, 1])
    c0 = -np.linalg.det(M)
    return np.array([c2, c1, c0])


def synthesize(spec: PoleSpec, b: float, dt: float = DT) -> AdrcDesign:
    if b == 0 or not np.isfinite(b):
        raise SynthesisError("nominal input gain b must be finite and nonzero")
    if not (spec.p_obs < 0 and spec.p_ctr < 0):
        raise SynthesisError("observer and controller poles must be stable (negative)")
    a1, a2 = spec.a1, spec.a2
    po, pc = spec.p_obs, spec.p_ctr

    # det(sI - A + L C) = s^3 + (l1 - a2) s^2 + (l2 - a1 - a2 l1) s + l3  ==  (s - po)^3
    l1 = a2 - 3.0 * po
    l2 = 3.0 * po**2 + a1 + a2 * l1
    l3 = -po**3
    # s^2 - (a2 + b k2) s - (a1 + b k1)  ==  (s - pc)^2
    k1 = (-pc**2 - a1) / b
    k2 = (2.0 * pc - a2) / b
    v = pc**2 / b

    design = AdrcDesign(a1=a1, a2=a2, b=b, L=(l1, l2, l3), K=(k1, k2), v=v,
                        p_obs=po, p_ctr=pc, dt=dt)

    target = np.array([-3.0 * po, 3.0 * po**2, -po**3])
    got = _char_poly3(design.observer_matrix())
    if not np.allclose(got, target, rtol=1e-9, atol=0.0):
        raise SynthesisError(f"observer placement check failed: {got} vs {target}")
    return design


@dataclass
class AdrcState:
    x1: float = 0.0
    x2: float = 0.0
    psi: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2, self.psi])


def control_step(design: AdrcDesign, state: AdrcState, y: float, r: float,
                 discretization=None) -> tuple[float, AdrcState]:
    """One controller sample: saturated control from the current estimate,
    then the observer advanced by one period using the *saturated* input."""
    k1, k2 = design.K
    u_raw = k1 * state.x1 + k2 * state.x2 + design.v * r - state.psi / design.b
    u = min(1.0, max(-1.0, u_raw))
    Ad, bu, by = discretization if discretization is not None else design.discretize()
    z = Ad @ state.as_array() + bu * u + by * y
    return u, AdrcState(*z)


class AdrcController:
    """Stateful wrapper around :func:`control_step` for the simulation loop.

    Works on plain floats; the loop calls it 10^4 to 10^5 times per run.
    """

    def __init__(self, design: AdrcDesign, initial: AdrcState | None = None):
        self.design = design
        Ad, bu, by = design.discretize()
        self._Ad = [[float(v) for v in row] for row in Ad]
        self._bu = [float(v) for v in bu]
        self._by = [float(v) for v in by]
        self._initial = initial or AdrcState()
        self.reset()

    def reset(self, initial: AdrcState | None = None):
        s = initial or self._initial
        self.z = [s.x1, s.x2, s.psi]

    @property
    def state(self) -> AdrcState:
        return AdrcState(*self.z)

    def __call__(self, y: float, r: float) -> float:
        d = self.design
        z0, z1, z2 = self.z
        u = d.K[0] * z0 + d.K[1] * z1 + d.v * r - z2 / d.b
        if u > 1.0:
            u = 1.0
        elif u < -1.0:
            u = -1.0
        A, bu, by = self._Ad, self._bu, self._by
        self.z = [
            A[0][0] * z0 + A[0][1] * z1 + A[0][2] * z2 + bu[0] * u + by[0] * y,
            A[1][0] * z0 + A[1][1] * z1 + A[1][2] * z2 + bu[1] * u + by[1] * y,
            A[2][0] * z0 + A[2][1] * z1 + A[2][2] * z2 + bu[2] * u + by[2] * y,
        ]
        return u
