"""Physical constants of the hybrid aerial-underwater vehicle.

Values are the prototype constants, shared by both simulated media.
Drag matrices are stored as their raw diagonal coefficients; the effective
matrices fold in the ``rho / 2`` prefactor of the medium they are built for.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

# Medium-independent constants
MASS = 1.2860  # [kg]
GRAVITY = (0.0, 0.0, 9.78)  # [m/s^2]
ARM_LENGTH = 0.27  # [m]
METACENTRIC_OFFSET = 0.02  # [m]
HULL_VOLUME = 1.6e-3  # [m^3]
INERTIA = (
    (1.4465e-2, 0.020415e-2, -0.078703e-2),
    (0.020415e-2, 2.8818e-2, -0.011572e-2),
    (-0.078703e-2, -0.011572e-2, 1.5410e-2),
)
DRAG_TRANSLATIONAL = (1.25e-2, 1.25e-2, 4.99e-2)
DRAG_ROTATIONAL = (1.25e-2, 1.25e-2, 4.99e-2)

# Air
AIR_DENSITY = 1.293  # [kg/m^3]
AIR_EFFECTIVE_MASS = 1.2868
AIR_EFFECTIVE_INERTIA = (
    (1.4466e-2, 0.020566e-2, -0.078552e-2),
    (0.020566e-2, 2.8819e-2, -0.011420e-2),
    (-0.078552e-2, -0.011420e-2, 1.5412e-2),
)
AIR_THRUST_COEFF = 2.45e-7
AIR_TORQUE_COEFF = 5e-11

# Water
WATER_DENSITY = 1000.0
WATER_EFFECTIVE_MASS = 1.9301
WATER_EFFECTIVE_INERTIA = (
    (1.5639e-2, 0.13781e-2, 0.038688e-2),
    (0.13781e-2, 2.9992e-2, 0.10582e-2),
    (0.038688e-2, 0.10582e-2, 1.6584e-2),
)
WATER_THRUST_COEFF = 1.6230e-9
WATER_TORQUE_COEFF = 1e-11

DRAG_FRAMES = ("paper", "body")

# Layout of the packed parameter vector consumed by the compiled kernels.
P_RHO, P_M, P_MRHO = 0, 1, 2
P_J = 3  # 9 entries, row-major
P_JINV = 12  # inverse of the effective inertia, 9 entries
P_ZETA, P_ETA = 21, 22
P_C = 23  # 3 entries, effective
P_N = 26  # 3 entries, effective
P_L, P_CM, P_V = 29, 30, 31
P_G = 32  # 3 entries
P_BODY_DRAG = 35
P_SIZE = 36


def _matrix(rows) -> np.ndarray:
    return np.array(rows, dtype=float)


@dataclass(frozen=True)
class MediumParams:
    """Density-dependent constants for one medium.

    ``drag_translational`` and ``drag_rotational`` hold the raw diagonal
    coefficients; :attr:`C` and :attr:`N` give the effective drag matrices
    ``(rho / 2) * diag(...)``.

    ``drag_frame`` "body" applies the drag to the body-axis velocity,
    ``-R C |R^T v| R^T v``.  "paper" keeps the literal ``-R C |v| v`` with the
    world velocity, which is not dissipative once the vehicle is rotated.
    """

    name: str
    rho: float
    m: float
    m_rho: float
    J: np.ndarray
    J_rho: np.ndarray
    zeta: float
    eta: float
    drag_translational: np.ndarray
    drag_rotational: np.ndarray
    l: float = ARM_LENGTH
    c: float = METACENTRIC_OFFSET
    V: float = HULL_VOLUME
    g: np.ndarray = field(default_factory=lambda: np.array(GRAVITY))
    drag_frame: str = "body"

    def __post_init__(self):
        for name in ("J", "J_rho", "drag_translational", "drag_rotational", "g"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float))
        if self.rho <= 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.m <= 0:
            raise ValueError(f"m must be positive, got {self.m}")
        if self.m_rho < self.m:
            raise ValueError("m_rho must be >= m")
        for name in ("J", "J_rho"):
            mat = getattr(self, name)
            if mat.shape != (3, 3) or not np.allclose(mat, mat.T):
                raise ValueError(f"{name} must be a symmetric 3x3 matrix")
            if np.linalg.eigvalsh(mat).min() <= 0:
                raise ValueError(f"{name} must be positive definite")
        if np.any(self.drag_translational < 0) or np.any(self.drag_rotational < 0):
            raise ValueError("drag coefficients must be non-negative")
        if self.drag_frame not in DRAG_FRAMES:
            raise ValueError(f"drag_frame must be one of {DRAG_FRAMES}")

    @property
    def C(self) -> np.ndarray:
        return 0.5 * self.rho * np.diag(self.drag_translational)

    @property
    def N(self) -> np.ndarray:
        return 0.5 * self.rho * np.diag(self.drag_rotational)

    @property
    def gravity_norm(self) -> float:
        return float(np.linalg.norm(self.g))

    @property
    def net_gravity(self) -> np.ndarray:
        """Gravity minus buoyancy, ``(m - rho V) g``."""
        return (self.m - self.rho * self.V) * self.g

    def hover_speed(self) -> float:
        """Rotor speed [rpm] at which four rotors balance the dry weight."""
        return float(np.sqrt(self.m * self.gravity_norm / (4.0 * self.rho * self.zeta)))

    def buoyancy_bias_speed(self) -> float:
        """Speed [rpm] at which two vertical thrusters cancel the net buoyancy."""
        return float(np.sqrt(np.linalg.norm(self.net_gravity) / (2.0 * self.rho * self.zeta)))

    def with_overrides(self, **kwargs) -> "MediumParams":
        return replace(self, **kwargs)

    def pack(self) -> np.ndarray:
        p = np.zeros(P_SIZE)
        p[P_RHO] = self.rho
        p[P_M] = self.m
        p[P_MRHO] = self.m_rho
        p[P_J:P_J + 9] = self.J.ravel()
        p[P_JINV:P_JINV + 9] = np.linalg.inv(self.J_rho).ravel()
        p[P_ZETA] = self.zeta
        p[P_ETA] = self.eta
        p[P_C:P_C + 3] = 0.5 * self.rho * self.drag_translational
        p[P_N:P_N + 3] = 0.5 * self.rho * self.drag_rotational
        p[P_L] = self.l
        p[P_CM] = self.c
        p[P_V] = self.V
        p[P_G:P_G + 3] = self.g
        p[P_BODY_DRAG] = 1.0 if self.drag_frame == "body" else 0.0
        return p


def air_params(**overrides) -> MediumParams:
    base = MediumParams(
        name="air",
        rho=AIR_DENSITY,
        m=MASS,
        m_rho=AIR_EFFECTIVE_MASS,
        J=_matrix(INERTIA),
        J_rho=_matrix(AIR_EFFECTIVE_INERTIA),
        zeta=AIR_THRUST_COEFF,
        eta=AIR_TORQUE_COEFF,
        drag_translational=np.array(DRAG_TRANSLATIONAL),
        drag_rotational=np.array(DRAG_ROTATIONAL),
    )
    return replace(base, **overrides) if overrides else base


def water_params(**overrides) -> MediumParams:
    base = MediumParams(
        name="water",
        rho=WATER_DENSITY,
        m=MASS,
        m_rho=WATER_EFFECTIVE_MASS,
        J=_matrix(INERTIA),
        J_rho=_matrix(WATER_EFFECTIVE_INERTIA),
        zeta=WATER_THRUST_COEFF,
        eta=WATER_TORQUE_COEFF,
        drag_translational=np.array(DRAG_TRANSLATIONAL),
        drag_rotational=np.array(DRAG_ROTATIONAL),
    )
    params = replace(base, **overrides) if overrides else base
    if params.rho * params.V <= params.m:
        raise ValueError("water instance must be positively buoyant (rho * V > m)")
    return params


@dataclass(frozen=True)
class VehicleModel:
    """The pair of medium parameter sets describing one vehicle."""

    air: MediumParams = field(default_factory=air_params)
    water: MediumParams = field(default_factory=water_params)

    def perturbed(self, scale_mass: float, scale_drag: float) -> "VehicleModel":
        def scaled(p: MediumParams) -> MediumParams:
            return replace(
                p,
                m=p.m * scale_mass,
                m_rho=p.m_rho * scale_mass,
                drag_translational=p.drag_translational * scale_drag,
                drag_rotational=p.drag_rotational * scale_drag,
            )

        return VehicleModel(scaled(self.air), scaled(self.water))
