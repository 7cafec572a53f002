"""Full small-signal model with wind states, time-domain response and modes.

State ordering is (d delta, d omega, d z):

    d/dt [dd; dw; dz] = [[0, I, 0], [R1, -M^-1 D, R2], [R3, 0, R4]] [dd; dw; dz]
    R1 = M^-1 (K11 - K12 A3^-1 A1),   R2 = -M^-1 K12 A3^-1 A2
    R3 = -B A3^-1 A1,                 R4 = A - B A3^-1 A2

(all Jacobians barred when farms are present).  The damping D is an
optional extension; with D_i = 2 sigma M_i every swing mode of the
wind-free model gets real part -sigma.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import ValidationError
from . import linearize as lz


@dataclass(frozen=True)
class StateSpaceModel:
    R1: np.ndarray
    R2: np.ndarray
    R3: np.ndarray
    R4: np.ndarray
    M: np.ndarray
    D: np.ndarray
    L: np.ndarray

    @property
    def n(self):
        return self.R1.shape[0]

    @property
    def nz(self):
        return self.R4.shape[0]

    @property
    def labels(self):
        n = self.n
        return ([f"delta_{i + 1}" for i in range(n)] + [f"omega_{i + 1}" for i in range(n)]
                + [f"z_{k + 1}" for k in range(self.nz)])

    def matrix(self):
        n, nz = self.n, self.nz
        A = np.zeros((2 * n + nz, 2 * n + nz))
        A[:n, n:2 * n] = np.eye(n)
        A[n:2 * n, :n] = self.R1
        A[n:2 * n, n:2 * n] = -np.diag(self.D / self.M)
        if nz:
            A[n:2 * n, 2 * n:] = self.R2
            A[2 * n:, :n] = self.R3
            A[2 * n:, 2 * n:] = self.R4
        return A

    def input_vector(self, machine: int, magnitude: float = 1.0):
        """State derivative produced by a step dP_m on ``machine`` (0-based)."""
        b = np.zeros(2 * self.n + self.nz)
        b[self.n + machine] = magnitude / self.M[machine]
        return b


def damping_from_sigma(M, sigma):
    return 2.0 * float(sigma) * np.asarray(M, float)


def assemble_full_model(M, jac: lz.JacobianSet, damping_sigma: Optional[float] = None,
                        D=None) -> StateSpaceModel:
    """Blocks R1..R4 from one Jacobian set (nominal or barred)."""
    M = np.asarray(M, float)
    n = len(M)
    if D is None:
        D = damping_from_sigma(M, damping_sigma) if damping_sigma else np.zeros(n)
    A3 = jac.A3
    S1 = lz.lu_solve_checked(A3, jac.A1)
    L = jac.K11 - jac.K12 @ S1
    R1 = L / M[:, None]
    if jac.wind is None:
        z = np.zeros((n, 0))
        return StateSpaceModel(R1=R1, R2=z, R3=z.T, R4=np.zeros((0, 0)), M=M, D=np.asarray(D, float), L=L)
    S2 = lz.lu_solve_checked(A3, jac.A2)
    R2 = -(jac.K12 @ S2) / M[:, None]
    B = jac.wind.B
    R3 = -B @ S1
    R4 = jac.wind.A - B @ S2
    return StateSpaceModel(R1=R1, R2=R2, R3=R3, R4=R4, M=M, D=np.asarray(D, float), L=L)


# ----------------------------------------------------------------------------
# trajectories

@dataclass(frozen=True)
class TrajectoryMatrix:
    data: np.ndarray            # rho x s
    dt: float
    labels: tuple
    disturbance: str = ""
    unstable: bool = False

    @property
    def time(self):
        return np.arange(self.data.shape[1]) * self.dt

    def to_csv(self, path=None):
        buf = io.StringIO()
        buf.write("time," + ",".join(self.labels) + "\n")
        t = self.time
        for k in range(self.data.shape[1]):
            buf.write("%.17g," % t[k] + ",".join("%.17g" % v for v in self.data[:, k]) + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path, dt=None, disturbance=""):
        with open(path) as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) for v in r] for r in reader if r]
        arr = np.array(rows)
        if dt is None:
            dt = float(arr[1, 0] - arr[0, 0]) if len(arr) > 1 else 0.0
        return cls(data=arr[:, 1:].T.copy(), dt=dt, labels=tuple(header[1:]), disturbance=disturbance)


def _zoh(A, b, dt):
    """Exact discretization of x' = A x + b u (u held over the step)."""
    N = A.shape[0]
    aug = np.zeros((N + 1, N + 1))
    aug[:N, :N] = A * dt
    aug[:N, N] = b * dt
    E = sla.expm(aug)
    return E[:N, :N], E[:N, N]


def _trapezoid(A, b, dt):
    N = A.shape[0]
    I = np.eye(N)
    lhs = I - 0.5 * dt * A
    Ad = np.linalg.solve(lhs, I + 0.5 * dt * A)
    bd = np.linalg.solve(lhs, dt * b)
    return Ad, bd


def simulate(model: StateSpaceModel, machine: int = 0, magnitude: float = 1.0,
             horizon: float = 100.0, dt: float = 0.01, outputs: str = "angles",
             method: str = "zoh") -> TrajectoryMatrix:
    """Response from equilibrium to a step of ``magnitude`` in P_m of ``machine``.

    ``method='zoh'`` propagates with the exact matrix exponential of the
    step (L-stable and free of truncation error for a step input);
    ``'trapezoidal'`` uses the implicit trapezoidal rule.  ``outputs`` is
    'angles', 'speeds', 'machines' (angles and speeds) or 'all'.
    """
    if dt <= 0 or horizon < 0:
        raise ValidationError("need dt > 0 and horizon >= 0")
    steps = int(round(horizon / dt))
    A = model.matrix()
    b = model.input_vector(machine, magnitude)
    if method == "zoh":
        Ad, bd = _zoh(A, b, dt)
    elif method == "trapezoidal":
        Ad, bd = _trapezoid(A, b, dt)
    else:
        raise ValidationError(f"unknown integration method {method!r}")
    n = model.n
    sel = {"angles": slice(0, n), "speeds": slice(n, 2 * n), "machines": slice(0, 2 * n),
           "all": slice(0, A.shape[0])}.get(outputs)
    if sel is None:
        raise ValidationError(f"unknown output selection {outputs!r}")
    X = np.zeros((A.shape[0], steps + 1))
    x = np.zeros(A.shape[0])
    for k in range(steps):
        x = Ad @ x + bd
        X[:, k + 1] = x
    early = np.max(np.abs(X[:, :max(2, steps // 100 + 1)]))
    unstable = (not np.all(np.isfinite(X))) or (early > 0 and np.max(np.abs(X)) > 1e6 * early)
    labels = tuple(model.labels[sel])
    desc = f"step {magnitude:g} pu in P_m of machine {machine + 1}"
    return TrajectoryMatrix(data=X[sel].copy(), dt=dt, labels=labels, disturbance=desc, unstable=bool(unstable))


# ----------------------------------------------------------------------------
# modes

@dataclass(frozen=True)
class Mode:
    eigenvalue: complex
    frequency_hz: float
    damping_ratio: float
    oscillatory: bool
    swing_share: float          # fraction of the right eigenvector in (delta, omega)


def modal_table(model: StateSpaceModel, tol: float = 1e-9) -> list:
    """All modes, one entry per conjugate pair, sorted by frequency.

    Eigenvalues within sqrt(machine eps * ||A||) of the origin are treated
    as exact zeros: the undamped rigid-body mode is a defective double
    zero that the eigensolver splits into a tiny spurious pair.
    """
    A = model.matrix()
    vals, vecs = np.linalg.eig(A)
    n = model.n
    zero_tol = 10.0 * np.sqrt(np.finfo(float).eps * max(1.0, np.linalg.norm(A, 1)))
    out = []
    for k, lam in enumerate(vals):
        if abs(lam) <= zero_tol:
            if lam.imag < 0:
                continue
            lam = 0j
        elif lam.imag < -tol * abs(lam):
            continue
        osc = abs(lam.imag) > tol * max(1.0, abs(lam))
        v = np.abs(vecs[:, k]) ** 2
        share = float(v[:2 * n].sum() / v.sum())
        f = abs(lam.imag) / (2 * np.pi) if osc else 0.0
        zeta = -lam.real / abs(lam) if abs(lam) > 0 else 0.0
        out.append(Mode(complex(lam.real, abs(lam.imag) if osc else 0.0), f, float(zeta), bool(osc), share))
    out.sort(key=lambda md: (md.frequency_hz, md.eigenvalue.real))
    return out


def slow_modes(modes, r: int, swing_share: float = 0.5):
    """The r - 1 lowest-frequency oscillatory modes dominated by machine states."""
    sw = [md for md in modes if md.oscillatory and md.swing_share >= swing_share]
    return sw[:r - 1]


def write_modes_csv(modes, path):
    with open(path, "w") as fh:
        fh.write("real,imag,frequency_hz,damping_ratio,oscillatory,swing_share\n")
        for md in modes:
            fh.write("%.17g,%.17g,%.17g,%.17g,%d,%.17g\n" % (md.eigenvalue.real, md.eigenvalue.imag,
                                                             md.frequency_hz, md.damping_ratio,
                                                             int(md.oscillatory), md.swing_share))
