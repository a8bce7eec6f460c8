"""Hybrid rigid-body model: one derivative function per medium plus RK4.

The state is the 12-vector ``[p, euler, v, omega]`` with position and linear
velocity in the world frame, ZYX Euler angles ``(roll, pitch, yaw)`` and the
angular velocity in the body frame.  Heavy lifting is done by ``numba``
kernels operating on flat arrays so the planner can roll out thousands of
segments per second; the public functions wrap them with validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numba import njit

from .params import (
    P_BODY_DRAG,
    P_C,
    P_CM,
    P_G,
    P_J,
    P_JINV,
    P_L,
    P_M,
    P_MRHO,
    P_N,
    P_RHO,
    P_V,
    P_ZETA,
    MediumParams,
)

STATE_SIZE = 12
DIVERGENCE_LIMIT = 1e6
OMEGA_MAX = 10000.0  # [rpm]


class IntegrationError(RuntimeError):
    """Raised when the integrated state leaves the finite, bounded region."""


class Medium(str, Enum):
    AIR = "air"
    WATER = "water"
    TRANSITION = "transition"


@dataclass(frozen=True)
class VehicleState:
    p: np.ndarray
    euler: np.ndarray
    v: np.ndarray
    omega: np.ndarray

    @classmethod
    def from_array(cls, x) -> "VehicleState":
        x = np.asarray(x, dtype=float)
        return cls(x[0:3].copy(), x[3:6].copy(), x[6:9].copy(), x[9:12].copy())

    @classmethod
    def at(cls, position, yaw: float = 0.0) -> "VehicleState":
        """A state at rest with level attitude."""
        return cls(
            np.array(position, dtype=float),
            np.array([0.0, 0.0, yaw]),
            np.zeros(3),
            np.zeros(3),
        )

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.p, self.euler, self.v, self.omega]).astype(float)


# ---------------------------------------------------------------------------
# Compiled kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    return a - 2.0 * math.pi * math.ceil((a - math.pi) / (2.0 * math.pi))


@njit(cache=True)
def _rotation(phi, theta, psi):
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    R = np.empty((3, 3))
    R[0, 0] = cp * ct
    R[0, 1] = cp * st * sf - sp * cf
    R[0, 2] = cp * st * cf + sp * sf
    R[1, 0] = sp * ct
    R[1, 1] = sp * st * sf + cp * cf
    R[1, 2] = sp * st * cf - cp * sf
    R[2, 0] = -st
    R[2, 1] = ct * sf
    R[2, 2] = ct * cf
    return R


@njit(cache=True)
def _attitude_rate(phi, theta):
    # Printed verbatim; differs from the textbook Euler-rate matrix.
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    M = np.empty((3, 3))
    M[0, 0] = ct
    M[0, 1] = 0.0
    M[0, 2] = -cf * st
    M[1, 0] = 0.0
    M[1, 1] = 1.0
    M[1, 2] = sf
    M[2, 0] = st
    M[2, 1] = 0.0
    M[2, 2] = cf * ct
    return M


@njit(cache=True)
def _signed_force(rho_zeta, w):
    return rho_zeta * w * abs(w)


@njit(cache=True)
def _forces(omega, P):
    rz = P[P_RHO] * P[P_ZETA]
    f = np.empty(4)
    for i in range(4):
        f[i] = _signed_force(rz, omega[i])
    return f


@njit(cache=True)
def _deriv(x, f, P, air):
    """State derivative for constant rotor forces ``f``."""
    phi, theta, psi = x[3], x[4], x[5]
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    r00, r01, r02 = cp * ct, cp * st * sf - sp * cf, cp * st * cf + sp * sf
    r10, r11, r12 = sp * ct, sp * st * sf + cp * cf, sp * st * cf - cp * sf
    r20, r21, r22 = -st, ct * sf, ct * cf
    vx, vy, vz = x[6], x[7], x[8]
    wx, wy, wz = x[9], x[10], x[11]
    m = P[P_M]
    gx, gy, gz = P[P_G], P[P_G + 1], P[P_G + 2]
    cx, cy, cz = P[P_C], P[P_C + 1], P[P_C + 2]

    # translational drag, in body or world axes
    if P[P_BODY_DRAG] > 0.5:
        bx = r00 * vx + r10 * vy + r20 * vz
        by = r01 * vx + r11 * vy + r21 * vz
        bz = r02 * vx + r12 * vy + r22 * vz
    else:
        bx, by, bz = vx, vy, vz
    dbx, dby, dbz = -cx * abs(bx) * bx, -cy * abs(by) * by, -cz * abs(bz) * bz

    if air:
        tx, ty, tz = 0.0, 0.0, f[0] + f[1] + f[2] + f[3]
        weight = m
        l = P[P_L]
        mx = l * (f[1] - f[3])
        my = l * (f[2] - f[0])
        # -sum (-1)^i f_i
        mz = l * (f[0] - f[1] + f[2] - f[3])
    else:
        tx, ty, tz = f[1] + f[3], 0.0, f[0] + f[2]
        weight = m - P[P_RHO] * P[P_V]
        gnorm = math.sqrt(gx * gx + gy * gy + gz * gz)
        restoring = P[P_CM] * (m + P[P_RHO] * P[P_V]) * gnorm
        l = P[P_L]
        mx = -restoring * sf
        my = -restoring * st + l * (f[2] - f[0])
        mz = l * (f[1] - f[3])

    # thrust and drag, rotated to the world frame
    sx, sy, sz = tx + dbx, ty + dby, tz + dbz
    ex = r00 * sx + r01 * sy + r02 * sz
    ey = r10 * sx + r11 * sy + r12 * sz
    ez = r20 * sx + r21 * sy + r22 * sz
    # -w x (m v)
    corx = -m * (wy * vz - wz * vy)
    cory = -m * (wz * vx - wx * vz)
    corz = -m * (wx * vy - wy * vx)
    mr = P[P_MRHO]

    J = P[P_J:P_J + 9]
    jwx = J[0] * wx + J[1] * wy + J[2] * wz
    jwy = J[3] * wx + J[4] * wy + J[5] * wz
    jwz = J[6] * wx + J[7] * wy + J[8] * wz
    # -w x (J w)
    tqx = mx - (wy * jwz - wz * jwy)
    tqy = my - (wz * jwx - wx * jwz)
    tqz = mz - (wx * jwy - wy * jwx)
    nx = -P[P_N] * abs(wx) * wx
    ny = -P[P_N + 1] * abs(wy) * wy
    nz = -P[P_N + 2] * abs(wz) * wz
    Ji = P[P_JINV:P_JINV + 9]

    dx = np.empty(12)
    dx[0] = vx
    dx[1] = vy
    dx[2] = vz
    dx[3] = ct * wx - cf * st * wz
    dx[4] = wy + sf * wz
    dx[5] = st * wx + cf * ct * wz
    dx[6] = (ex + corx - weight * gx) / mr
    dx[7] = (ey + cory - weight * gy) / mr
    dx[8] = (ez + corz - weight * gz) / mr
    tqx += nx
    tqy += ny
    tqz += nz
    dx[9] = Ji[0] * tqx + Ji[1] * tqy + Ji[2] * tqz
    dx[10] = Ji[3] * tqx + Ji[4] * tqy + Ji[5] * tqz
    dx[11] = Ji[6] * tqx + Ji[7] * tqy + Ji[8] * tqz
    return dx


@njit(cache=True)
def aerial_deriv(x, omega, P):
    return _deriv(x, _forces(omega, P), P, True)


@njit(cache=True)
def water_deriv(x, omega, P):
    return _deriv(x, _forces(omega, P), P, False)


@njit(cache=True)
def _substeps(x, f, dt, P, air):
    """Number of RK4 substeps keeping ``h * lambda <= 2`` for the quadratic drag.

    The local eigenvalue of ``-k|w|w`` is ``2k|w|``; the rate on each axis
    is bounded by the current one or the terminal rate under the load on
    that axis, whichever is larger.  Classical RK4 is stable up to about
    2.78 on the negative real axis.  Water rotational drag is what makes
    this necessary.
    """
    g = P[P_G:P_G + 3]
    gnorm = math.sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2])
    fsum = abs(f[0]) + abs(f[1]) + abs(f[2]) + abs(f[3])
    load = fsum + (P[P_M] + P[P_RHO] * P[P_V]) * gnorm
    l = P[P_L]
    if air:
        t0 = l * abs(f[1] - f[3])
        t1 = l * abs(f[2] - f[0])
        t2 = l * abs(f[0] - f[1] + f[2] - f[3])
    else:
        restoring = P[P_CM] * (P[P_M] + P[P_RHO] * P[P_V]) * gnorm
        t0 = restoring
        t1 = restoring + l * abs(f[2] - f[0])
        t2 = l * abs(f[1] - f[3])
    lam = 0.0
    for i in range(3):
        k = P[P_C + i]
        if k > 0.0:
            v = max(abs(x[6 + i]), math.sqrt(load / k))
            lam = max(lam, 2.0 * k * v / P[P_MRHO])
        k = P[P_N + i]
        if k > 0.0:
            torque = t0 if i == 0 else (t1 if i == 1 else t2)
            w = max(abs(x[9 + i]), math.sqrt(torque / k))
            lam = max(lam, 2.0 * k * w * abs(P[P_JINV + 4 * i]))
    return min(max(int(math.ceil(0.5 * lam * dt)), 1), 400)


@njit(cache=True)
def _rk4(x, f, h, P, air):
    k1 = _deriv(x, f, P, air)
    k2 = _deriv(x + 0.5 * h * k1, f, P, air)
    k3 = _deriv(x + 0.5 * h * k2, f, P, air)
    k4 = _deriv(x + h * k3, f, P, air)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@njit(cache=True)
def rk4_step(x, omega, dt, P_air, P_water, mode=0):
    """Advance one control period with constant rotor speeds.

    Classical RK4, sub-stepped where the drag is stiff.  ``mode`` forces the aerial (1) or underwater (-1) model;
    0 picks it from the sign of z at step start.  Returns ``(x_next, ok)``;
    ``ok`` is False on divergence.
    """
    air = x[2] > 0.0 if mode == 0 else mode > 0
    P = P_air if air else P_water
    f = _forces(omega, P)
    n = _substeps(x, f, dt, P, air)
    h = dt / n
    xn = x.copy()
    for _ in range(n):
        xn = _rk4(xn, f, h, P, air)
    ok = True
    for i in range(12):
        if not (abs(xn[i]) <= DIVERGENCE_LIMIT):
            ok = False
    for i in range(3, 6):
        xn[i] = wrap_angle(xn[i])
    return xn, ok


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------


def _check_rotors(rotors) -> np.ndarray:
    w = np.asarray(rotors, dtype=float)
    if w.shape != (4,):
        raise ValueError("expected four rotor speeds")
    if not np.all(np.isfinite(w)):
        raise ValueError("rotor speeds must be finite")
    return w


def _check_state(state) -> np.ndarray:
    x = state.to_array() if isinstance(state, VehicleState) else np.asarray(state, dtype=float)
    if x.shape != (STATE_SIZE,):
        raise ValueError(f"state must have {STATE_SIZE} components")
    if not np.all(np.isfinite(x)):
        raise ValueError("state must be finite")
    return x


def rotor_thrust(omega_i: float, params: MediumParams) -> float:
    """Propeller force ``rho * zeta * omega**2`` [N] for a speed in rpm."""
    if omega_i < 0:
        raise ValueError(f"rotor speed must be non-negative, got {omega_i}")
    return params.rho * params.zeta * omega_i**2


def signed_thrust(omega_i: float, params: MediumParams) -> float:
    """Reversible thruster force, ``rho * zeta * omega * |omega|``."""
    return params.rho * params.zeta * omega_i * abs(omega_i)


def euler_rotation_matrix(euler) -> np.ndarray:
    phi, theta, psi = (float(a) for a in euler)
    return _rotation(phi, theta, psi)


def attitude_rate_matrix(euler) -> np.ndarray:
    """Matrix mapping body angular velocity to Euler-angle rates."""
    return _attitude_rate(float(euler[0]), float(euler[1]))


def aerial_derivatives(state, rotors, params: MediumParams) -> np.ndarray:
    x = _check_state(state)
    w = _check_rotors(rotors)
    if np.any(w < 0):
        raise ValueError("aerial rotor speeds must be non-negative")
    return aerial_deriv(x, w, params.pack())


def underwater_derivatives(state, rotors, params: MediumParams) -> np.ndarray:
    x = _check_state(state)
    return water_deriv(x, _check_rotors(rotors), params.pack())


def medium_of(z: float, mu: float) -> Medium:
    if mu <= 0:
        raise ValueError("mu must be positive")
    if z > mu:
        return Medium.AIR
    if z < -mu:
        return Medium.WATER
    return Medium.TRANSITION


def model_medium(z: float) -> Medium:
    """Model used for the dynamics: the side of the surface the hull is on."""
    return Medium.AIR if z > 0.0 else Medium.WATER


def integrate_step(
    state,
    rotors,
    air: MediumParams,
    water: MediumParams,
    dt: float,
    medium: Medium | None = None,
) -> VehicleState:
    """Advance ``state`` by ``dt`` holding ``rotors`` constant.

    With ``medium`` unset or ``TRANSITION`` the model follows the sign of z.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = _check_state(state)
    mode = {Medium.AIR: 1, Medium.WATER: -1}.get(medium, 0)
    xn, ok = rk4_step(x, _check_rotors(rotors), float(dt), air.pack(), water.pack(), mode)
    if not ok:
        raise IntegrationError("state diverged during integration")
    return VehicleState.from_array(xn)
