"""Static network description and AC power flow.

All electrical quantities are per unit on the case base; angles are in
radians.  Lines are lossless: a line carries only a series susceptance
``B`` (= 1/x) and an optional total charging susceptance split half to
each end.

Bus-admittance sign convention is the physical one: a series reactance
x gives a series admittance -j/x, so the off-diagonal entry is
Y_jk = +jB_jk and the diagonal collects -jB_jk from every incident line.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import DivergenceError, SingularityError, ValidationError
from . import windfarm as wf

BUS_KINDS = ("sync-gen", "wind-gen", "non-gen")


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str = "non-gen"
    G: float = 0.0          # shunt conductance
    B: float = 0.0          # shunt susceptance
    P_load: float = 0.0
    Q_load: float = 0.0


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    B: float                # series susceptance 1/x, positive
    charging: float = 0.0   # total line-charging susceptance
    R: float = 0.0          # kept only so validate_case can reject it


@dataclass(frozen=True)
class SynchronousGenerator:
    bus: int
    M: float                # inertia, s^2 pu (2H / omega_s)
    xd_prime: float
    p_set: float            # scheduled active power
    v_set: float = 1.0      # terminal voltage setpoint
    D: float = 0.0          # optional damping (extension, off by default)
    name: str = ""


@dataclass(frozen=True)
class NetworkCase:
    buses: tuple
    lines: tuple
    generators: tuple
    wind_farms: tuple = ()
    base_mva: float = 100.0
    frequency_hz: float = 60.0
    slack: Optional[int] = None     # generator index (0-based); None -> largest M
    name: str = "case"
    provenance: dict = field(default_factory=dict, compare=False)

    @property
    def m(self):
        return len(self.buses)

    @property
    def n(self):
        return len(self.generators)

    @cached_property
    def bus_pos(self):
        """Map bus id -> row position."""
        return {b.id: k for k, b in enumerate(self.buses)}

    @cached_property
    def gen_pos(self):
        """Row position of each generator's terminal bus."""
        return np.array([self.bus_pos[g.bus] for g in self.generators], dtype=int)

    @cached_property
    def farm_pos(self):
        return np.array([self.bus_pos[f.bus] for f in self.wind_farms], dtype=int)

    @property
    def slack_index(self):
        if self.slack is not None:
            return int(self.slack)
        return int(np.argmax([g.M for g in self.generators]))

    @property
    def M(self):
        return np.array([g.M for g in self.generators], dtype=float)

    @property
    def xd(self):
        return np.array([g.xd_prime for g in self.generators], dtype=float)

    @property
    def P_load(self):
        return np.array([b.P_load for b in self.buses], dtype=float)

    @property
    def Q_load(self):
        return np.array([b.Q_load for b in self.buses], dtype=float)

    @property
    def omega_s(self):
        return 2.0 * math.pi * self.frequency_hz

    def with_farms(self, farms: Sequence) -> "NetworkCase":
        """Copy of the case with ``farms`` attached and bus kinds refreshed."""
        return _rekind(replace(self, wind_farms=tuple(farms)))

    def without_farms(self) -> "NetworkCase":
        return self.with_farms(())


def _rekind(case):
    gen_buses = {g.bus for g in case.generators}
    farm_buses = {f.bus for f in case.wind_farms}
    buses = []
    for b in case.buses:
        kind = "sync-gen" if b.id in gen_buses else ("wind-gen" if b.id in farm_buses else "non-gen")
        buses.append(replace(b, kind=kind))
    return replace(case, buses=tuple(buses))


# ----------------------------------------------------------------------------
# validation

@dataclass(frozen=True)
class Finding:
    code: str
    message: str
    ref: object = None


def validate_case(case: NetworkCase) -> list:
    """Return a list of findings; an empty list means the case is well formed.

    Never raises.
    """
    out = []
    ids = [b.id for b in case.buses]
    seen = set()
    for i in ids:
        if i in seen:
            out.append(Finding("duplicate-id", f"bus id {i} appears more than once", i))
        seen.add(i)
    idset = set(ids)
    for b in case.buses:
        if b.kind not in BUS_KINDS:
            out.append(Finding("bad-kind", f"bus {b.id} has unknown kind {b.kind!r}", b.id))
    for k, ln in enumerate(case.lines):
        for end in (ln.from_bus, ln.to_bus):
            if end not in idset:
                out.append(Finding("dangling-reference", f"line {k} references missing bus {end}", k))
        if ln.from_bus == ln.to_bus:
            out.append(Finding("self-loop", f"line {k} connects bus {ln.from_bus} to itself", k))
        if not ln.B > 0:
            out.append(Finding("nonpositive-susceptance", f"line {k} has B = {ln.B}", k))
        if ln.R != 0.0:
            out.append(Finding("resistive-line", f"line {k} has R = {ln.R}; only lossless lines are supported", k))
    for k, g in enumerate(case.generators):
        if g.bus not in idset:
            out.append(Finding("dangling-reference", f"generator {k + 1} references missing bus {g.bus}", k))
        if not g.M > 0:
            out.append(Finding("nonpositive-inertia", f"generator {k + 1} has M = {g.M}", k))
        if not g.xd_prime > 0:
            out.append(Finding("nonpositive-reactance", f"generator {k + 1} has x'd = {g.xd_prime}", k))
        if not g.v_set > 0:
            out.append(Finding("nonpositive-voltage", f"generator {k + 1} has v_set = {g.v_set}", k))
    if len(case.generators) < 2:
        out.append(Finding("too-few-generators", "at least two synchronous generators are required"))
    gen_buses = [g.bus for g in case.generators]
    if len(set(gen_buses)) != len(gen_buses):
        out.append(Finding("duplicate-generator-bus", "two generators share a bus"))
    farm_buses = [f.bus for f in case.wind_farms]
    for k, f in enumerate(case.wind_farms):
        if f.bus not in idset:
            out.append(Finding("dangling-reference", f"wind farm {k + 1} references missing bus {f.bus}", k))
        if f.bus in gen_buses:
            out.append(Finding("farm-on-generator-bus", f"wind farm {k + 1} sits on generator bus {f.bus}", k))
        if not f.gamma >= 1:
            out.append(Finding("bad-gamma", f"wind farm {k + 1} has gamma = {f.gamma}", k))
        if not f.nu > 0:
            out.append(Finding("bad-wind-speed", f"wind farm {k + 1} has nu = {f.nu}", k))
    if len(set(farm_buses)) != len(farm_buses):
        out.append(Finding("duplicate-farm-bus", "two wind farms share a bus"))
    if case.slack is not None and not 0 <= case.slack < len(case.generators):
        out.append(Finding("bad-slack", f"slack index {case.slack} out of range"))
    # kind consistency
    kinds = {b.id: b.kind for b in case.buses}
    for g in case.generators:
        if kinds.get(g.bus, "sync-gen") != "sync-gen":
            out.append(Finding("kind-mismatch", f"bus {g.bus} hosts a generator but is {kinds[g.bus]}", g.bus))
    for f in case.wind_farms:
        if f.bus in kinds and f.bus not in gen_buses and kinds[f.bus] != "wind-gen":
            out.append(Finding("kind-mismatch", f"bus {f.bus} hosts a wind farm but is {kinds[f.bus]}", f.bus))
    attached = set(gen_buses) | set(farm_buses)
    for b in case.buses:
        if b.kind in ("sync-gen", "wind-gen") and b.id not in attached:
            out.append(Finding("kind-mismatch", f"bus {b.id} is {b.kind} but nothing is attached", b.id))
    # connectivity (only meaningful if references resolve)
    if not any(f.code in ("dangling-reference", "duplicate-id") for f in out) and case.buses:
        if not _is_connected(case):
            out.append(Finding("disconnected", "network graph is not connected"))
    return out


def _is_connected(case):
    pos = {b.id: k for k, b in enumerate(case.buses)}
    m = len(case.buses)
    if m <= 1:
        return True
    i = [pos[ln.from_bus] for ln in case.lines]
    j = [pos[ln.to_bus] for ln in case.lines]
    g = csr_matrix((np.ones(len(i)), (i, j)), shape=(m, m))
    ncomp, _ = connected_components(g, directed=False)
    return ncomp == 1


def check_case(case):
    """Raise ValidationError if validate_case reports anything."""
    findings = validate_case(case)
    if findings:
        raise ValidationError("; ".join(f.message for f in findings), findings)
    return case


# ----------------------------------------------------------------------------
# admittance

def build_admittance(case: NetworkCase, lines: Optional[Sequence] = None,
                     shunts: bool = True) -> np.ndarray:
    """Dense complex bus-admittance matrix.

    ``lines`` restricts assembly to a subset of lines (used for the
    internal/external split); ``shunts=False`` drops bus shunts and line
    charging.
    """
    if lines is None:
        lines = case.lines
        if not _is_connected(case):
            raise ValidationError("network graph is not connected",
                                  [Finding("disconnected", "network graph is not connected")])
    pos = case.bus_pos
    m = case.m
    Y = np.zeros((m, m), dtype=complex)
    for ln in lines:
        a, b = pos[ln.from_bus], pos[ln.to_bus]
        Y[a, b] += 1j * ln.B
        Y[b, a] += 1j * ln.B
        Y[a, a] -= 1j * ln.B
        Y[b, b] -= 1j * ln.B
        if shunts and ln.charging:
            Y[a, a] += 0.5j * ln.charging
            Y[b, b] += 0.5j * ln.charging
    if shunts:
        for k, bus in enumerate(case.buses):
            Y[k, k] += bus.G + 1j * bus.B
    return Y


def complex_power_derivatives(Y, V):
    """dS/de and dS/df for S = V * conj(Y V), V = e + j f."""
    I = Y @ V
    dS_de = np.diag(np.conj(I)) + np.diag(V) @ np.conj(Y)
    dS_df = 1j * np.diag(np.conj(I)) - 1j * np.diag(V) @ np.conj(Y)
    return dS_de, dS_df


# ----------------------------------------------------------------------------
# power flow

@dataclass(frozen=True)
class OperatingPoint:
    V: np.ndarray               # complex bus voltages
    delta0: np.ndarray          # internal machine angles
    E: np.ndarray               # internal EMF magnitudes
    P_m: np.ndarray             # mechanical power (= electrical at equilibrium)
    S_gen: np.ndarray           # generator terminal injection
    S_inj: np.ndarray           # net injection at each bus (= V conj(YV))
    p_dispatch: np.ndarray      # scheduled generator P after dispatch policy
    wind_states: tuple = ()
    mismatch: float = 0.0
    iterations: int = 0

    @property
    def V_Re(self):
        return self.V.real

    @property
    def V_Im(self):
        return self.V.imag

    @property
    def omega0(self):
        return np.zeros_like(self.delta0)

    @property
    def has_wind(self):
        return len(self.wind_states) > 0


def dispatch_setpoints(case: NetworkCase, policy: str = "proportional") -> np.ndarray:
    """Generator active-power schedule after absorbing wind generation.

    ``proportional`` scales every generator by (1 - P_wind / sum P_set);
    ``slack`` leaves the schedule alone so the slack machine picks up the
    whole change.
    """
    p = np.array([g.p_set for g in case.generators], dtype=float)
    if not case.wind_farms:
        return p
    p_wind = sum(wf.farm_setpoint_power(f, case.base_mva)[0] for f in case.wind_farms)
    if policy == "slack":
        return p
    if policy != "proportional":
        raise ValueError(f"unknown dispatch policy {policy!r}")
    scale = 1.0 - p_wind / p.sum()
    if scale <= 0:
        raise ValidationError(f"wind generation {p_wind:.3f} pu exceeds scheduled generation")
    return p * scale


def solve_power_flow(case: NetworkCase, init: Optional[np.ndarray] = None,
                     tol: float = 1e-8, max_iter: int = 30,
                     dispatch: str = "proportional") -> OperatingPoint:
    """Full Newton-Raphson in rectangular coordinates.

    Generator buses are PV (voltage-magnitude equation e^2 + f^2 = v^2),
    the slack generator bus is fixed at v_set at angle 0, all other buses
    are PQ.  Wind farms inject their MPPT active power and reactive
    setpoint as constant PQ.  ``init`` is an optional complex voltage
    vector; the default is a flat start.
    """
    check_case(case)
    Y = build_admittance(case)
    m, n = case.m, case.n
    gpos = case.gen_pos
    sl = gpos[case.slack_index]
    vset = np.array([g.v_set for g in case.generators])
    p_gen = dispatch_setpoints(case, dispatch)

    P_spec = -case.P_load.copy()
    Q_spec = -case.Q_load.copy()
    P_spec[gpos] += p_gen
    for f in case.wind_farms:
        pw, qw = wf.farm_setpoint_power(f, case.base_mva)
        P_spec[case.bus_pos[f.bus]] += pw
        Q_spec[case.bus_pos[f.bus]] += qw

    pv = np.array([p for p in gpos if p != sl], dtype=int)
    is_gen = np.zeros(m, bool)
    is_gen[gpos] = True
    pq = np.flatnonzero(~is_gen)
    nonslack = np.array([k for k in range(m) if k != sl], dtype=int)
    vmag_pv = vset[[i for i in range(n) if gpos[i] != sl]]

    if init is None:
        V = np.ones(m, dtype=complex)
        V[gpos] = vset
    else:
        V = np.asarray(init, dtype=complex).copy()
    V[sl] = vset[case.slack_index]

    def residual(V):
        S = V * np.conj(Y @ V)
        return np.concatenate([S.real[nonslack] - P_spec[nonslack],
                               S.imag[pq] - Q_spec[pq],
                               np.abs(V[pv]) ** 2 - vmag_pv ** 2])

    it = 0
    F = residual(V)
    err = np.max(np.abs(F))
    while err >= tol:
        if it >= max_iter:
            raise DivergenceError(f"power flow did not converge in {max_iter} iterations "
                                  f"(mismatch {err:.3e})", mismatch=err, iterations=it)
        dS_de, dS_df = complex_power_derivatives(Y, V)
        J_e = np.vstack([dS_de.real[nonslack], dS_de.imag[pq],
                         2 * np.diag(V.real)[pv]])
        J_f = np.vstack([dS_df.real[nonslack], dS_df.imag[pq],
                         2 * np.diag(V.imag)[pv]])
        J = np.hstack([J_e[:, nonslack], J_f[:, nonslack]])
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise SingularityError(f"power-flow Jacobian singular at iteration {it}") from exc
        k = len(nonslack)
        V[nonslack] += dx[:k] + 1j * dx[k:]
        F = residual(V)
        err = np.max(np.abs(F))
        it += 1
        if not np.isfinite(err):
            raise DivergenceError("power flow diverged (non-finite mismatch)", mismatch=err, iterations=it)

    S_inj = V * np.conj(Y @ V)
    S_load = case.P_load + 1j * case.Q_load
    S_gen = S_inj[gpos] + S_load[gpos]
    I_gen = np.conj(S_gen / V[gpos])
    E_ph = V[gpos] + 1j * case.xd * I_gen
    states = tuple(wf.wind_steady_state(f, V[case.bus_pos[f.bus]]) for f in case.wind_farms)
    return OperatingPoint(V=V, delta0=np.angle(E_ph), E=np.abs(E_ph), P_m=S_gen.real.copy(),
                          S_gen=S_gen, S_inj=S_inj, p_dispatch=p_gen, wind_states=states,
                          mismatch=float(err), iterations=it)


def generator_power(delta, V_Re, V_Im, E, xd):
    """Terminal active and reactive output of classical machines.

    P = E/x' (V_Re sin d - V_Im cos d)
    Q = (E (V_Re cos d + V_Im sin d) - |V|^2) / x'
    """
    P = E / xd * (V_Re * np.sin(delta) - V_Im * np.cos(delta))
    Q = (E * (V_Re * np.cos(delta) + V_Im * np.sin(delta)) - (V_Re ** 2 + V_Im ** 2)) / xd
    return P, Q


def balance_residual(case: NetworkCase, op: OperatingPoint, delta=None, V=None,
                     z=None, Y=None) -> np.ndarray:
    """Nonlinear algebraic residual g(delta, z, V), stacked [P rows; Q rows].

    g = (generator + wind injection) - load - V conj(Y V).  At the operating
    point it vanishes; its partial derivatives define A1, A2 and A3.
    ``V`` is the real vector [V_Re, V_Im]; ``z`` the stacked wind states.
    """
    if Y is None:
        Y = build_admittance(case)
    m = case.m
    delta = op.delta0 if delta is None else np.asarray(delta, float)
    if V is None:
        Vc = op.V
    else:
        V = np.asarray(V, float)
        Vc = V[:m] + 1j * V[m:]
    S = -(case.P_load + 1j * case.Q_load) - Vc * np.conj(Y @ Vc)
    gpos = case.gen_pos
    P_s, Q_s = generator_power(delta, Vc[gpos].real, Vc[gpos].imag, op.E, case.xd)
    S[gpos] += P_s + 1j * Q_s
    if op.wind_states:
        zs = wf.split_states(z, len(op.wind_states)) if z is not None else [st.z for st in op.wind_states]
        for st, zk in zip(op.wind_states, zs):
            k = case.bus_pos[st.spec.bus]
            pw, qw = wf.farm_power_at(st, zk, Vc[k], case.base_mva)
            S[k] += pw + 1j * qw
    return np.concatenate([S.real, S.imag])


# ----------------------------------------------------------------------------
# case I/O

def case_from_dict(d: dict, registry=None) -> NetworkCase:
    f_hz = float(d.get("frequency_hz", 60.0))
    w_s = 2 * math.pi * f_hz
    buses = tuple(Bus(id=int(b["id"]), kind=b.get("kind", "non-gen"),
                      G=float(b.get("G", 0.0)), B=float(b.get("B", 0.0)),
                      P_load=float(b.get("P_load", 0.0)), Q_load=float(b.get("Q_load", 0.0)))
                  for b in d["buses"])
    lines = []
    for ln in d["lines"]:
        if "b" in ln:
            b = float(ln["b"])
        else:
            b = 1.0 / float(ln["x"])
        lines.append(Line(int(ln["from"]), int(ln["to"]), b, float(ln.get("charging", 0.0)),
                          float(ln.get("r", 0.0))))
    gens = []
    for k, g in enumerate(d["generators"]):
        M = float(g["M"]) if "M" in g else 2.0 * float(g["H"]) / w_s
        gens.append(SynchronousGenerator(bus=int(g["bus"]), M=M, xd_prime=float(g["xd_prime"]),
                                         p_set=float(g.get("p_set", 0.0)), v_set=float(g.get("v_set", 1.0)),
                                         D=float(g.get("D", 0.0)), name=g.get("name", f"G{k + 1}")))
    farms = tuple(wf.farm_from_dict(f, registry) for f in d.get("wind_farms", []))
    slack = d.get("slack_generator")
    case = NetworkCase(buses=buses, lines=tuple(lines), generators=tuple(gens), wind_farms=farms,
                       base_mva=float(d.get("base_mva", 100.0)), frequency_hz=f_hz,
                       slack=None if slack is None else int(slack) - 1,
                       name=d.get("name", "case"), provenance=d.get("provenance", {}))
    if any("kind" not in b for b in d["buses"]):
        case = _rekind(case)
    return case


def case_to_dict(case: NetworkCase) -> dict:
    return {
        "name": case.name,
        "base_mva": case.base_mva,
        "frequency_hz": case.frequency_hz,
        "slack_generator": None if case.slack is None else case.slack + 1,
        "provenance": case.provenance,
        "buses": [{"id": b.id, "kind": b.kind, "G": b.G, "B": b.B, "P_load": b.P_load, "Q_load": b.Q_load}
                  for b in case.buses],
        "lines": [{"from": ln.from_bus, "to": ln.to_bus, "b": ln.B, "charging": ln.charging, "r": ln.R}
                  for ln in case.lines],
        "generators": [{"name": g.name, "bus": g.bus, "M": g.M, "xd_prime": g.xd_prime, "p_set": g.p_set,
                        "v_set": g.v_set, "D": g.D} for g in case.generators],
        "wind_farms": [wf.farm_to_dict(f) for f in case.wind_farms],
    }


def load_case(path, registry=None) -> NetworkCase:
    path = str(path)
    if path in BUILTIN_CASES:
        return load_builtin(path, registry)
    with open(path) as fh:
        return case_from_dict(json.load(fh), registry)


def save_case(case: NetworkCase, path):
    Path(path).write_text(json.dumps(case_to_dict(case), indent=1, sort_keys=True))


BUILTIN_CASES = ("ieee68",)


def builtin_path(name="ieee68"):
    return resources.files("windcoh") / "data" / f"{name}.json"


def load_builtin(name="ieee68", registry=None) -> NetworkCase:
    if name not in BUILTIN_CASES:
        raise ValidationError(f"unknown built-in case {name!r}")
    with builtin_path(name).open() as fh:
        return case_from_dict(json.load(fh), registry)
