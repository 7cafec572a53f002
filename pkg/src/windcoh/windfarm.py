"""Aggregated DFIG wind farm: turbine drivetrain, machine, PI power loops.

A farm is gamma identical units sharing one averaged state.  Units:

* drivetrain in SI (kg m^2, N m, rad/s, rad);
* DFIG electrical quantities in per unit on the unit rating, with
  inductances in pu*s (L = X / omega_b) so flux linkages are in pu*s and
  omega_e = 2 pi f in rad/s;
* farm injections into the grid in per unit on the system base.

Current directions: stator currents in generator direction (positive
out of the machine), rotor currents in motor direction (positive into
the rotor).  With these directions the output power expressions

    P_s = v_qs i_qs + v_ds i_ds,   Q_s = -v_ds i_qs + v_qs i_ds

hold as written.  The dq frame rotates synchronously and is fixed at the
steady-state angle theta0 of the farm bus voltage, so at equilibrium
v_qs = |V| and v_ds = 0:

    v_qs =  V_Re cos(theta0) + V_Im sin(theta0)
    v_ds =  V_Re sin(theta0) - V_Im cos(theta0)

State vector (9 per farm):
    z = [omega_r, omega_g, theta_T, i_ds, i_qs, i_dr, i_qr, x_p, x_q]
where x_p and x_q are the integrator states of the active and reactive
power PI loops acting on v_qr and v_dr respectively.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from typing import Optional

import numpy as np

from .errors import DomainError, EquilibriumError, ValidationError

NZ = 9
STATE_NAMES = ("omega_r", "omega_g", "theta_T", "i_ds", "i_qs", "i_dr", "i_qr", "x_p", "x_q")


@dataclass(frozen=True)
class TurbineParams:
    J_r: float
    J_g: float
    B_dt: float
    K_dt: float
    B_r: float
    B_g: float
    N_g: float
    rho: float
    A_s: float
    C_p: float

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v > 0:
                raise ValidationError(f"turbine parameter {k} must be positive, got {v}")
        if self.N_g < 1:
            raise ValidationError(f"gear ratio N_g must be >= 1, got {self.N_g}")

    @property
    def k_opt(self):
        """P* = k_opt nu^3 (W) at the constant MPPT power coefficient."""
        return 0.5 * self.rho * self.A_s * self.C_p


@dataclass(frozen=True)
class DFIGParams:
    R_s: float
    R_r: float
    L_ls: float
    L_lr: float
    L_m: float
    p_e: int = 4
    omega_e: float = 2 * math.pi * 60

    def __post_init__(self):
        if min(self.L_ls, self.L_lr, self.L_m) <= 0:
            raise ValidationError("DFIG inductances must be positive")
        if self.p_e <= 0 or self.p_e % 2:
            raise ValidationError(f"pole count must be a positive even number, got {self.p_e}")

    @property
    def L_s(self):
        return self.L_ls + self.L_m

    @property
    def L_r(self):
        return self.L_lr + self.L_m

    @classmethod
    def from_reactances(cls, R_s, R_r, X_ls, X_lr, X_m, p_e=4, f_hz=60.0):
        w = 2 * math.pi * f_hz
        return cls(R_s, R_r, X_ls / w, X_lr / w, X_m / w, int(p_e), w)

    def inductance_matrix(self):
        """psi = L4 @ [i_ds, i_qs, i_dr, i_qr] with psi = [psi_ds, psi_qs, psi_dr, psi_qr]."""
        Ls, Lr, Lm = self.L_s, self.L_r, self.L_m
        return np.array([[-Ls, 0, Lm, 0],
                         [0, -Ls, 0, Lm],
                         [-Lm, 0, Lr, 0],
                         [0, -Lm, 0, Lr]], dtype=float)


@dataclass(frozen=True)
class PIGains:
    kp_p: float
    ki_p: float
    kp_q: float
    ki_q: float


@dataclass(frozen=True)
class WindFarmSpec:
    bus: int
    gamma: float
    nu: float
    turbine: TurbineParams
    dfig: DFIGParams
    pi_gains: PIGains
    q_setpoint: float = 0.0         # per unit on the unit rating
    rated_mva: float = 1.76
    torque_factor: float = 1.0      # 1.0 power invariant; 1.5 for the peak-value convention
    model: str = "custom"

    def scaled(self, gamma=None, nu=None, bus=None):
        kw = {}
        if gamma is not None:
            kw["gamma"] = gamma
        if nu is not None:
            kw["nu"] = nu
        if bus is not None:
            kw["bus"] = bus
        return replace(self, **kw)


# ----------------------------------------------------------------------------
# registry

def registry_path():
    return resources.files("windcoh") / "data" / "wind_registry.json"


def load_registry(path=None) -> dict:
    if path is None:
        with registry_path().open() as fh:
            return json.load(fh)
    with open(path) as fh:
        return json.load(fh)


def make_farm(bus, gamma, nu=None, model=None, registry=None, **overrides) -> WindFarmSpec:
    """Build a farm from a registry entry (the shipped default if ``model`` is None)."""
    reg = registry if registry is not None else load_registry()
    model = model or reg["default"]
    if model not in reg["models"]:
        raise ValidationError(f"unknown wind model {model!r}; known: {sorted(reg['models'])}")
    e = reg["models"][model]
    turbine = TurbineParams(**e["turbine"])
    d = e["dfig"]
    dfig = DFIGParams.from_reactances(d["R_s"], d["R_r"], d["X_ls"], d["X_lr"], d["X_m"],
                                      d.get("p_e", 4), d.get("f_hz", 60.0))
    pi = PIGains(**e["pi"])
    spec = WindFarmSpec(bus=int(bus), gamma=float(gamma), nu=float(nu if nu is not None else e["nu_rated"]),
                        turbine=turbine, dfig=dfig, pi_gains=pi,
                        q_setpoint=float(e.get("q_setpoint", 0.0)), rated_mva=float(e["rated_mva"]),
                        torque_factor=float(e.get("torque_factor", 1.0)), model=model)
    return replace(spec, **overrides) if overrides else spec


def farm_from_dict(d: dict, registry=None) -> WindFarmSpec:
    extra = {}
    if "q_setpoint" in d:
        extra["q_setpoint"] = float(d["q_setpoint"])
    if "torque_factor" in d:
        extra["torque_factor"] = float(d["torque_factor"])
    return make_farm(d["bus"], d["gamma"], d.get("nu"), d.get("model"), registry, **extra)


def farm_to_dict(f: WindFarmSpec) -> dict:
    return {"bus": f.bus, "gamma": f.gamma, "nu": f.nu, "model": f.model,
            "q_setpoint": f.q_setpoint, "torque_factor": f.torque_factor}


# ----------------------------------------------------------------------------
# algebraic pieces

def aero_torque(nu, omega_r, turbine: TurbineParams):
    """T_a = rho A_s nu^3 C_p / (2 omega_r)."""
    if np.any(np.asarray(omega_r) <= 0):
        raise DomainError("aerodynamic torque needs omega_r > 0")
    return turbine.rho * turbine.A_s * np.asarray(nu) ** 3 * turbine.C_p / (2 * np.asarray(omega_r))


def mppt_power(nu, turbine: TurbineParams):
    """Static MPPT setpoint in W."""
    if nu <= 0:
        raise DomainError(f"wind speed must be positive, got {nu}")
    return turbine.k_opt * nu ** 3


def farm_setpoint_power(spec: WindFarmSpec, base_mva: float):
    """(P, Q) injected by the whole farm at its setpoints, system per unit."""
    p_unit = mppt_power(spec.nu, spec.turbine) / (spec.rated_mva * 1e6)
    ratio = spec.gamma * spec.rated_mva / base_mva
    return ratio * p_unit, ratio * spec.q_setpoint


def frame_voltages(V_bus, theta0):
    """(v_qs, v_ds) of bus phasor V in the frame fixed at theta0."""
    c, s = math.cos(theta0), math.sin(theta0)
    return V_bus.real * c + V_bus.imag * s, V_bus.real * s - V_bus.imag * c


def stator_power(z, v_qs, v_ds):
    i_ds, i_qs = z[3], z[4]
    return v_qs * i_qs + v_ds * i_ds, -v_ds * i_qs + v_qs * i_ds


@dataclass(frozen=True)
class WindState:
    spec: WindFarmSpec
    z: np.ndarray
    theta0: float
    v_qs: float
    v_ds: float
    p_ref: float
    q_ref: float

    def __getattr__(self, name):
        if name in STATE_NAMES:
            return float(self.z[STATE_NAMES.index(name)])
        raise AttributeError(name)

    @property
    def fluxes(self):
        """(psi_ds, psi_qs, psi_dr, psi_qr)."""
        return tuple(self.spec.dfig.inductance_matrix() @ self.z[3:7])

    @property
    def T_a(self):
        return float(aero_torque(self.spec.nu, self.z[0], self.spec.turbine))

    @property
    def T_g(self):
        return float(generator_torque(self.z, self.spec))


def generator_torque(z, spec: WindFarmSpec):
    d = spec.dfig
    c = spec.torque_factor * d.p_e / 2 * d.L_m * spec.rated_mva * 1e6
    return c * (z[4] * z[5] - z[3] * z[6])


def unit_derivatives(z, v_qs, v_ds, spec: WindFarmSpec, p_ref, q_ref):
    """Right-hand side dz/dt of one averaged unit."""
    t, d, g = spec.turbine, spec.dfig, spec.pi_gains
    w_r, w_g, th, i_ds, i_qs, i_dr, i_qr, x_p, x_q = z
    psi = d.inductance_matrix() @ np.array([i_ds, i_qs, i_dr, i_qr])
    psi_ds, psi_qs, psi_dr, psi_qr = psi
    P_s = v_qs * i_qs + v_ds * i_ds
    Q_s = -v_ds * i_qs + v_qs * i_ds
    v_qr = x_p + g.kp_p * (p_ref - P_s)
    v_dr = x_q + g.kp_q * (q_ref - Q_s)
    slip = d.omega_e - d.p_e / 2 * w_g
    dpsi = np.array([
        v_ds + d.R_s * i_ds + d.omega_e * psi_qs,
        v_qs + d.R_s * i_qs - d.omega_e * psi_ds,
        v_dr - d.R_r * i_dr + slip * psi_qr,
        v_qr - d.R_r * i_qr - slip * psi_dr,
    ])
    di = np.linalg.solve(d.inductance_matrix(), dpsi)
    T_a = aero_torque(spec.nu, w_r, t)
    T_g = generator_torque(z, spec)
    dw_r = (t.B_dt / t.N_g * w_g - t.K_dt * th - (t.B_dt + t.B_r) * w_r + T_a) / t.J_r
    dw_g = (t.B_dt / t.N_g * w_r + t.K_dt / t.N_g * th - (t.B_dt / t.N_g ** 2 + t.B_g) * w_g - T_g) / t.J_g
    dth = w_r - w_g / t.N_g
    return np.array([dw_r, dw_g, dth, di[0], di[1], di[2], di[3],
                     g.ki_p * (p_ref - P_s), g.ki_q * (q_ref - Q_s)])


def wind_steady_state(spec: WindFarmSpec, bus_voltage: complex, tol: float = 1e-8) -> WindState:
    """Closed-form equilibrium with the dq frame aligned to the bus voltage.

    Stator currents follow from the setpoints (i_qs = P*/v, i_ds = Q*/v),
    rotor currents from the stator flux equations, the rotor speed from the
    drivetrain power balance and the integrators from the rotor voltage
    equations.  The result is re-substituted and rejected if any
    derivative exceeds ``tol``.
    """
    if not spec.nu > 0:
        raise DomainError(f"wind speed must be positive, got {spec.nu}")
    t, d = spec.turbine, spec.dfig
    V_bus = complex(bus_voltage)
    v = abs(V_bus)
    if v <= 0:
        raise DomainError("farm bus voltage is zero")
    theta0 = math.atan2(V_bus.imag, V_bus.real)
    v_qs, v_ds = v, 0.0
    p_ref = mppt_power(spec.nu, t) / (spec.rated_mva * 1e6)
    q_ref = spec.q_setpoint
    i_qs = p_ref / v
    i_ds = q_ref / v
    psi_qs = -(v_ds + d.R_s * i_ds) / d.omega_e
    psi_ds = (v_qs + d.R_s * i_qs) / d.omega_e
    i_qr = (psi_qs + d.L_s * i_qs) / d.L_m
    i_dr = (psi_ds + d.L_s * i_ds) / d.L_m
    z = np.zeros(NZ)
    z[3:7] = i_ds, i_qs, i_dr, i_qr
    T_g = generator_torque(z, spec)
    P_aero = mppt_power(spec.nu, t)
    a = t.B_r + t.B_g * t.N_g ** 2
    b = t.N_g * T_g
    w_r = (-b + math.sqrt(b * b + 4 * a * P_aero)) / (2 * a)
    w_g = t.N_g * w_r
    th = t.N_g * (T_g + t.B_g * t.N_g * w_r) / t.K_dt
    slip = d.omega_e - d.p_e / 2 * w_g
    psi_dr = -d.L_m * i_ds + d.L_r * i_dr
    psi_qr = -d.L_m * i_qs + d.L_r * i_qr
    v_dr = d.R_r * i_dr - slip * psi_qr
    v_qr = d.R_r * i_qr + slip * psi_dr
    z[0:3] = w_r, w_g, th
    z[7], z[8] = v_qr, v_dr          # PI errors are zero at equilibrium
    st = WindState(spec=spec, z=z, theta0=theta0, v_qs=v_qs, v_ds=v_ds, p_ref=p_ref, q_ref=q_ref)
    res = unit_derivatives(z, v_qs, v_ds, spec, p_ref, q_ref)
    if not np.all(np.isfinite(res)) or np.max(np.abs(res)) > tol:
        raise EquilibriumError("wind farm equilibrium residual too large",
                               {n: float(r) for n, r in zip(STATE_NAMES, res)})
    return st


def farm_power(state: WindState, V_bus=None, base_mva=None):
    """(P_w, Q_w) = gamma (v_qs i_qs + v_ds i_ds, -v_ds i_qs + v_qs i_ds).

    Returned on the unit rating unless ``base_mva`` is given, in which
    case the result is converted to the system base.
    """
    if V_bus is None:
        v_qs, v_ds = state.v_qs, state.v_ds
    else:
        v_qs, v_ds = frame_voltages(complex(V_bus), state.theta0)
    P, Q = stator_power(state.z, v_qs, v_ds)
    k = state.spec.gamma
    if base_mva is not None:
        k = k * state.spec.rated_mva / base_mva
    return k * P, k * Q


def farm_power_at(state: WindState, z, V_bus, base_mva):
    """Farm injection (system pu) for arbitrary state z and bus voltage."""
    v_qs, v_ds = frame_voltages(complex(V_bus), state.theta0)
    P, Q = stator_power(z, v_qs, v_ds)
    k = state.spec.gamma * state.spec.rated_mva / base_mva
    return k * P, k * Q


def split_states(z, p):
    z = np.asarray(z, float)
    return [z[NZ * k:NZ * (k + 1)] for k in range(p)]


# ----------------------------------------------------------------------------
# linearization

@dataclass(frozen=True)
class WindLinearization:
    A: np.ndarray       # NZ x NZ
    B: np.ndarray       # NZ x 2m (zero except the farm-bus V_Re / V_Im columns)
    C1: np.ndarray      # 1 x NZ, dP_w/dz (system pu)
    C2: np.ndarray      # 1 x NZ, dQ_w/dz
    D1: np.ndarray      # 1 x 2m, dP_w/dV
    D2: np.ndarray      # 1 x 2m, dQ_w/dV
    zeta: np.ndarray    # (zeta1, zeta2, zeta3, zeta4), D entries / gamma
    gamma: float
    bus_pos: int
    m: int


def unit_jacobians(state: WindState):
    """Analytic (dz'/dz, dz'/d[v_qs, v_ds]) at the state."""
    spec, z = state.spec, state.z
    t, d, g = spec.turbine, spec.dfig, spec.pi_gains
    w_r, w_g, th, i_ds, i_qs, i_dr, i_qr, x_p, x_q = z
    v_qs, v_ds = state.v_qs, state.v_ds
    Ls, Lr, Lm, we = d.L_s, d.L_r, d.L_m, d.omega_e
    slip = we - d.p_e / 2 * w_g
    psi_ds, psi_qs, psi_dr, psi_qr = d.inductance_matrix() @ z[3:7]
    kpP, kiP, kpQ, kiQ = g.kp_p, g.ki_p, g.kp_q, g.ki_q

    # flux-derivative partials: rows dpsi_ds, dpsi_qs, dpsi_dr, dpsi_qr
    F_i = np.array([
        [d.R_s, -we * Ls, 0.0, we * Lm],
        [we * Ls, d.R_s, -we * Lm, 0.0],
        [-kpQ * v_qs, kpQ * v_ds - slip * Lm, -d.R_r, slip * Lr],
        [-kpP * v_ds + slip * Lm, -kpP * v_qs, -slip * Lr, -d.R_r],
    ])
    F_wg = np.array([0.0, 0.0, -d.p_e / 2 * psi_qr, d.p_e / 2 * psi_dr])
    F_x = np.array([[0, 0], [0, 0], [0, 1], [1, 0]], dtype=float)      # columns x_p, x_q
    F_v = np.array([[0.0, 1.0],
                    [1.0, 0.0],
                    [-kpQ * i_ds, kpQ * i_qs],
                    [-kpP * i_qs, -kpP * i_ds]])                       # columns v_qs, v_ds
    Linv = np.linalg.inv(d.inductance_matrix())

    A = np.zeros((NZ, NZ))
    T_a = aero_torque(spec.nu, w_r, t)
    A[0, 0] = (-(t.B_dt + t.B_r) - T_a / w_r) / t.J_r
    A[0, 1] = t.B_dt / t.N_g / t.J_r
    A[0, 2] = -t.K_dt / t.J_r
    c = spec.torque_factor * d.p_e / 2 * Lm * spec.rated_mva * 1e6
    dTg = c * np.array([-i_qr, i_dr, i_qs, -i_ds])
    A[1, 0] = t.B_dt / t.N_g / t.J_g
    A[1, 1] = -(t.B_dt / t.N_g ** 2 + t.B_g) / t.J_g
    A[1, 2] = t.K_dt / t.N_g / t.J_g
    A[1, 3:7] = -dTg / t.J_g
    A[2, 0] = 1.0
    A[2, 1] = -1.0 / t.N_g
    A[3:7, 1] = Linv @ F_wg
    A[3:7, 3:7] = Linv @ F_i
    A[3:7, 7:9] = Linv @ F_x
    A[7, 3:7] = -kiP * np.array([v_ds, v_qs, 0, 0])
    A[8, 3:7] = -kiQ * np.array([v_qs, -v_ds, 0, 0])

    Bv = np.zeros((NZ, 2))
    Bv[3:7] = Linv @ F_v
    Bv[7] = -kiP * np.array([i_qs, i_ds])
    Bv[8] = -kiQ * np.array([i_ds, -i_qs])
    return A, Bv


def frame_rotation(theta0):
    """d[v_qs, v_ds] / d[V_Re, V_Im]."""
    c, s = math.cos(theta0), math.sin(theta0)
    return np.array([[c, s], [s, -c]])


def linearize_wind(spec: WindFarmSpec, state: WindState, bus_pos: int, m: int,
                   base_mva: float) -> WindLinearization:
    """A, B, C1, C2, D1, D2 of one farm, zero-padded over the 2m bus voltages."""
    if state.spec != spec:
        state = replace(state, spec=spec)
    A, Bv = unit_jacobians(state)
    R = frame_rotation(state.theta0)
    cols = [bus_pos, m + bus_pos]
    B = np.zeros((NZ, 2 * m))
    B[:, cols] = Bv @ R
    ratio = spec.rated_mva / base_mva
    i_ds, i_qs = state.z[3], state.z[4]
    v_qs, v_ds = state.v_qs, state.v_ds
    C1 = np.zeros((1, NZ))
    C2 = np.zeros((1, NZ))
    C1[0, 3], C1[0, 4] = spec.gamma * ratio * v_ds, spec.gamma * ratio * v_qs
    C2[0, 3], C2[0, 4] = spec.gamma * ratio * v_qs, -spec.gamma * ratio * v_ds
    # dP_s/d(v_qs, v_ds) = (i_qs, i_ds); dQ_s/d(v_qs, v_ds) = (i_ds, -i_qs)
    dP = ratio * np.array([i_qs, i_ds]) @ R
    dQ = ratio * np.array([i_ds, -i_qs]) @ R
    zeta = np.array([dP[0], dP[1], dQ[0], dQ[1]])
    D1 = np.zeros((1, 2 * m))
    D2 = np.zeros((1, 2 * m))
    D1[0, cols] = spec.gamma * zeta[:2]
    D2[0, cols] = spec.gamma * zeta[2:]
    return WindLinearization(A=A, B=B, C1=C1, C2=C2, D1=D1, D2=D2, zeta=zeta,
                             gamma=spec.gamma, bus_pos=bus_pos, m=m)


def multi_farm_D(lins):
    """Stacked (D1, D2), one row per farm, each 1 x 2m row from its farm."""
    pos = [l.bus_pos for l in lins]
    if len(set(pos)) != len(pos):
        raise ValidationError("two wind farms on the same bus")
    if not lins:
        raise ValidationError("multi_farm_D needs at least one farm")
    return np.vstack([l.D1 for l in lins]), np.vstack([l.D2 for l in lins])


@dataclass(frozen=True)
class StackedWind:
    """Block-diagonal assembly of several farm linearizations."""
    A: np.ndarray
    B: np.ndarray
    C1: np.ndarray      # p x (NZ p)
    C2: np.ndarray
    D1: np.ndarray      # p x 2m
    D2: np.ndarray
    bus_pos: tuple
    gammas: tuple
    zetas: np.ndarray   # p x 4

    @property
    def nz(self):
        return self.A.shape[0]


def stack_wind(lins) -> StackedWind:
    p = len(lins)
    A = np.zeros((NZ * p, NZ * p))
    C1 = np.zeros((p, NZ * p))
    C2 = np.zeros((p, NZ * p))
    for k, l in enumerate(lins):
        sl = slice(NZ * k, NZ * (k + 1))
        A[sl, sl] = l.A
        C1[k, sl] = l.C1[0]
        C2[k, sl] = l.C2[0]
    D1, D2 = multi_farm_D(lins)
    return StackedWind(A=A, B=np.vstack([l.B for l in lins]), C1=C1, C2=C2, D1=D1, D2=D2,
                       bus_pos=tuple(l.bus_pos for l in lins), gammas=tuple(l.gamma for l in lins),
                       zetas=np.vstack([l.zeta for l in lins]))
