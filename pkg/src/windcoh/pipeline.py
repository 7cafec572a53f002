"""Scenario configuration and end-to-end orchestration.

Stage order: validate -> powerflow -> linearize -> perturb -> coherency
-> modal -> simulate -> pca.  Every bundle file is written with fixed
formatting so reruns are byte-identical; wall-clock timings go to
``timings.json`` next to the bundle and are not part of it.
"""
from __future__ import annotations

import hashlib
import json
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import coherency as ch
from . import dynsim as ds
from . import linearize as lz
from . import netmodel as nm
from . import pca as pc
from . import perturbation as pt
from . import windfarm as wf
from .errors import NumericalError, ValidationError, WindcohError

STAGES = ("validate", "powerflow", "linearize", "perturb", "coherency", "modal", "simulate", "pca")


@dataclass(frozen=True)
class FarmOverride:
    bus: int
    gamma: float
    nu: Optional[float] = None

    @classmethod
    def parse(cls, text: str) -> "FarmOverride":
        """'BUS:GAMMA[:NU]'."""
        parts = text.split(":")
        if len(parts) not in (2, 3):
            raise ValidationError(f"farm spec {text!r} is not BUS:GAMMA[:NU]")
        try:
            bus, gamma = int(parts[0]), float(parts[1])
            nu = float(parts[2]) if len(parts) == 3 else None
        except ValueError as exc:
            raise ValidationError(f"farm spec {text!r}: {exc}") from None
        return cls(bus, gamma, nu)


@dataclass(frozen=True)
class Disturbance:
    machine: int = 1            # 1-based
    magnitude: float = 1.0
    horizon: float = 100.0
    dt: float = 0.01


@dataclass(frozen=True)
class Scenario:
    case: str = "ieee68"
    farms: tuple = ()
    r: int = 5
    coherency: bool = True
    modal: bool = True
    simulate: bool = True
    pca: bool = True
    disturbance: Disturbance = field(default_factory=Disturbance)
    damping_sigma: Optional[float] = 0.13
    pca_components: Optional[int] = None     # default r - 1
    pca_center: bool = True
    integrator: str = "zoh"
    outputs: str = "angles"
    dispatch: str = "proportional"
    registry: Optional[str] = None
    name: str = ""

    def __post_init__(self):
        farms = tuple(f if isinstance(f, FarmOverride) else
                      FarmOverride.parse(f) if isinstance(f, str) else FarmOverride(**f)
                      for f in self.farms)
        object.__setattr__(self, "farms", farms)
        if isinstance(self.disturbance, dict):
            object.__setattr__(self, "disturbance", Disturbance(**self.disturbance))

    @property
    def active_farms(self):
        """Farms with gamma > 0 (gamma = 0 disables a farm)."""
        return tuple(f for f in self.farms if f.gamma != 0)

    def validate(self):
        if self.r < 1:
            raise ValidationError(f"r must be >= 1, got {self.r}")
        for f in self.farms:
            if f.gamma < 0:
                raise ValidationError(f"farm at bus {f.bus}: gamma must be >= 0")
        if self.case != "ieee68" and not Path(self.case).exists():
            raise ValidationError(f"case file {self.case!r} does not exist")
        if self.registry and not Path(self.registry).exists():
            raise ValidationError(f"registry file {self.registry!r} does not exist")
        if self.integrator not in ("zoh", "trapezoidal"):
            raise ValidationError(f"unknown integrator {self.integrator!r}")
        if self.disturbance.dt <= 0 or self.disturbance.horizon < 0:
            raise ValidationError("disturbance needs dt > 0 and horizon >= 0")

    def to_dict(self):
        d = asdict(self)
        d["farms"] = [asdict(f) for f in self.farms]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown scenario fields: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "Scenario":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise ValidationError(f"cannot read scenario {path}: {exc}") from None


# ----------------------------------------------------------------------------
# results

@dataclass
class Result:
    scenario: Scenario
    case: Optional[nm.NetworkCase] = None
    case_wind: Optional[nm.NetworkCase] = None
    op: Optional[nm.OperatingPoint] = None
    op_wind: Optional[nm.OperatingPoint] = None
    jac: Optional[lz.JacobianSet] = None
    jac_wind: Optional[lz.JacobianSet] = None
    L0: Optional[np.ndarray] = None
    nominal: Optional[ch.CoherencyPartition] = None
    ledger: Optional[pt.PerturbationLedger] = None
    equivalent: Optional[pt.EquivalentLaplacian] = None
    partition: Optional[ch.CoherencyPartition] = None
    moved: frozenset = frozenset()
    ref_changes: tuple = ()
    model: Optional[ds.StateSpaceModel] = None
    modes: Optional[list] = None
    trajectory: Optional[ds.TrajectoryMatrix] = None
    pca_result: Optional[pc.PCAResult] = None
    pca_labels: Optional[np.ndarray] = None
    comparison: Optional[pc.ClusterComparison] = None
    warnings: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    completed: list = field(default_factory=list)
    failed_stage: Optional[str] = None
    error: Optional[BaseException] = None

    @property
    def ok(self):
        return self.error is None

    @property
    def exit_code(self):
        if self.error is None:
            return 0
        return getattr(self.error, "exit_code", 1)

    @property
    def slow_frequencies(self):
        return None if self.partition is None else self.partition.frequencies


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _input_digests(sc: Scenario):
    case_path = nm.builtin_path() if sc.case == "ieee68" else Path(sc.case)
    reg_path = Path(sc.registry) if sc.registry else wf.registry_path()
    return {"case": _digest(case_path), "registry": _digest(reg_path)}


def _stage_validate(res: Result):
    sc = res.scenario
    sc.validate()
    registry = wf.load_registry(sc.registry) if sc.registry else wf.load_registry()
    case = nm.load_case(sc.case, registry=registry)
    base = case.without_farms()
    nm.check_case(base)
    if base.n < sc.r:
        raise ValidationError(f"r = {sc.r} exceeds the number of machines ({base.n})")
    res.case = base
    farms = list(case.wind_farms)
    if sc.farms:
        farms = [wf.make_farm(f.bus, f.gamma, f.nu, registry=registry) for f in sc.active_farms]
    else:
        farms = [f for f in farms if f.gamma != 0]
    if farms:
        res.case_wind = base.with_farms(farms)
        nm.check_case(res.case_wind)


def _stage_powerflow(res: Result):
    sc = res.scenario
    res.op = nm.solve_power_flow(res.case, dispatch=sc.dispatch)
    if res.case_wind is not None:
        res.op_wind = nm.solve_power_flow(res.case_wind, dispatch=sc.dispatch)


def _stage_linearize(res: Result):
    res.jac = lz.network_jacobians(res.case, res.op)
    res.L0 = lz.kron_reduce(res.jac.K11, res.jac.K12, res.jac.A1, res.jac.A3)
    if res.case_wind is not None:
        res.jac_wind = lz.network_jacobians(res.case_wind, res.op_wind)


def _stage_perturb(res: Result):
    sc = res.scenario
    M = res.case.M
    res.nominal = ch.identify(M, res.L0, sc.r)
    if res.case_wind is None:
        return
    led = pt.build_ledger(res.jac, res.jac_wind)
    L0_I, L0_E, eps = lz.split_internal_external(res.L0, res.nominal)
    A3_I, A3_E, ext = lz.split_A3(res.case, res.op, res.jac.A3, res.nominal, eps)
    sp = pt.epsilon_split_perturbation(led, A3_I, A3_E, eps, L0_I, L0_E)
    sp.external_lines = tuple((l.from_bus, l.to_bus) for l in ext)
    led.split = sp
    res.ledger = led
    farms = res.case_wind.wind_farms
    res.equivalent = pt.equivalent_laplacian(led.L, res.nominal, L0_I, L0_E, eps,
                                             gammas=[f.gamma for f in farms],
                                             farm_buses=[f.bus for f in farms])


def _stage_coherency(res: Result):
    sc = res.scenario
    if res.equivalent is None:
        res.partition = res.nominal
        return
    res.partition = ch.identify(res.case.M, res.equivalent.L_eq, sc.r)
    res.moved, res.ref_changes = ch.partition_distance(res.nominal, res.partition)


def _full_model(res: Result):
    if res.model is None:
        jac = res.jac_wind if res.jac_wind is not None else res.jac
        res.model = ds.assemble_full_model(res.case.M, jac, res.scenario.damping_sigma)
    return res.model


def _stage_modal(res: Result):
    res.modes = ds.modal_table(_full_model(res))


def _stage_simulate(res: Result):
    sc = res.scenario
    d = sc.disturbance
    if not 1 <= d.machine <= res.case.n:
        raise ValidationError(f"disturbance machine {d.machine} out of range")
    tr = ds.simulate(_full_model(res), d.machine - 1, d.magnitude, d.horizon, d.dt,
                     outputs=sc.outputs, method=sc.integrator)
    if tr.unstable:
        warnings.warn("simulated response grows without bound", RuntimeWarning)
    res.trajectory = tr


def _stage_pca(res: Result):
    sc = res.scenario
    if res.trajectory is None:
        raise ValidationError("PCA needs the simulate stage")
    n = res.case.n
    data = res.trajectory.data[:n]
    c = sc.pca_components or max(1, sc.r - 1)
    res.pca_result = pc.pca_weightings(data, c, center=sc.pca_center)
    res.pca_labels = pc.cluster_coords(res.pca_result.coords, sc.r)
    if res.partition is not None:
        res.comparison = pc.compare_partitions(res.pca_labels, res.partition.labels)


_RUNNERS = {
    "validate": _stage_validate, "powerflow": _stage_powerflow, "linearize": _stage_linearize,
    "perturb": _stage_perturb, "coherency": _stage_coherency, "modal": _stage_modal,
    "simulate": _stage_simulate, "pca": _stage_pca,
}


def requested_stages(sc: Scenario, upto: Optional[str] = None):
    stages = ["validate", "powerflow", "linearize", "perturb"]
    if sc.coherency:
        stages.append("coherency")
    if sc.modal:
        stages.append("modal")
    if sc.simulate or sc.pca:
        stages.append("simulate")
    if sc.pca:
        stages.append("pca")
    if upto is not None:
        stages = [s for s in stages if STAGES.index(s) <= STAGES.index(upto)]
    return stages


def run_pipeline(scenario: Scenario, out=None, upto: Optional[str] = None) -> Result:
    """Run the requested stages; a failing stage stops everything downstream.

    The exception is stored on the result (``failed_stage``, ``error``)
    rather than raised, so the manifest is still written.
    """
    res = Result(scenario=scenario)
    for stage in requested_stages(scenario, upto):
        t0 = time.perf_counter()
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                _RUNNERS[stage](res)
            except (WindcohError, np.linalg.LinAlgError, ValueError) as exc:
                if not isinstance(exc, WindcohError):
                    exc = NumericalError(f"{type(exc).__name__}: {exc}") if isinstance(
                        exc, np.linalg.LinAlgError) else ValidationError(str(exc))
                res.failed_stage, res.error = stage, exc
        for w in caught:
            msg = f"{stage}: {w.message}"
            if msg not in res.warnings:
                res.warnings.append(msg)
        res.timings[stage] = time.perf_counter() - t0
        if res.error is not None:
            break
        res.completed.append(stage)
    if out is not None:
        write_bundle(res, out)
    return res


# ----------------------------------------------------------------------------
# bundle output

def _dumps(obj):
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def partition_report(res: Result) -> dict:
    sc = res.scenario
    rep = {"r": sc.r}
    if res.nominal is not None:
        rep["nominal"] = res.nominal.to_dict()
    if res.partition is not None:
        rep["partition"] = res.partition.to_dict()
    if res.case_wind is not None:
        rep["farms"] = [{"bus": f.bus, "gamma": f.gamma, "nu": f.nu,
                         "rated_mw": f.gamma * f.rated_mva} for f in res.case_wind.wind_farms]
        rep["moved_generators"] = sorted(i + 1 for i in res.moved)
        rep["reference_changes"] = [[a + 1, b + 1] for a, b in res.ref_changes]
    if res.comparison is not None:
        rep["pca"] = {"areas": [[int(i) + 1 for i in np.flatnonzero(res.pca_labels == k)]
                                for k in range(int(res.pca_labels.max()) + 1)],
                      "agreement": res.comparison.agreement,
                      "moved_vs_model": sorted(i + 1 for i in res.comparison.moved_set)}
    return rep


def write_bundle(res: Result, out) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    if res.nominal is not None or res.partition is not None:
        (out / "partition.json").write_text(_dumps(partition_report(res)))
        files.append("partition.json")
        p = res.partition or res.nominal
        pt.write_csv(out / "VL.csv", p.V_L)
        files.append("VL.csv")
    if res.modes is not None:
        ds.write_modes_csv(res.modes, out / "modes.csv")
        files.append("modes.csv")
    if res.ledger is not None:
        extra = {"L_eq": res.equivalent.L_eq, "Delta_eq_I": res.equivalent.Delta_I,
                 "Delta_eq_E": res.equivalent.Delta_E}
        pt.dump_ledger(res.ledger, out / "ledger", extra=extra)
        files.extend(sorted(f"ledger/{p.name}" for p in (out / "ledger").iterdir()))
    if res.trajectory is not None:
        res.trajectory.to_csv(out / "traj.csv")
        files.append("traj.csv")
    if res.pca_result is not None:
        pc.write_coords_csv(res.pca_result, out / "pca.csv")
        files.append("pca.csv")
    manifest = {
        "tool": "windcoh", "version": __version__,
        "inputs": _input_digests(res.scenario) if res.case is not None else {},
        "config": res.scenario.to_dict(),
        "stages_completed": list(res.completed),
        "failed_stage": res.failed_stage,
        "error": None if res.error is None else f"{type(res.error).__name__}: {res.error}",
        "warnings": list(res.warnings),
        "outputs": {f: _digest(out / f) for f in files},
    }
    (out / "manifest.json").write_text(_dumps(manifest))
    (out / "timings.json").write_text(_dumps({k: round(v, 6) for k, v in res.timings.items()}))
    return manifest


# ----------------------------------------------------------------------------
# sweeps

@dataclass(frozen=True)
class SweepRow:
    label: str
    bus: Optional[int]
    gamma: Optional[float]
    moved: tuple
    ref_changes: tuple
    frequencies: tuple
    error: Optional[str] = None
    exit_code: int = 0


def _sweep_point(args):
    sc, out = args
    res = run_pipeline(sc, out)
    f = sc.active_farms[0] if sc.active_farms else None
    label = sc.name or ("nominal" if f is None else f"bus{f.bus}_g{f.gamma:g}")
    err = None if res.ok else f"{res.failed_stage}: {res.error}"
    freqs = tuple(float(x) for x in res.slow_frequencies) if res.partition is not None else ()
    return SweepRow(label=label, bus=None if f is None else f.bus, gamma=None if f is None else f.gamma,
                    moved=tuple(sorted(i + 1 for i in res.moved)),
                    ref_changes=tuple((a + 1, b + 1) for a, b in res.ref_changes),
                    frequencies=freqs, error=err, exit_code=res.exit_code)


def sweep_scenarios(template: Scenario, gammas=None, buses=None):
    """One scenario per grid point; the template's first farm gives the defaults."""
    base = template.farms[0] if template.farms else None
    gammas = list(gammas) if gammas is not None else [base.gamma if base else 0.0]
    buses = list(buses) if buses is not None else ([base.bus] if base else [])
    if gammas == [] or buses == []:
        return []
    nu = base.nu if base else None
    out = []
    for b in buses:
        for g in gammas:
            farms = (FarmOverride(b, g, nu),) + tuple(template.farms[1:])
            out.append(replace(template, farms=farms, name=f"bus{b}_g{g:g}"))
    return out


def sweep(template: Scenario, gammas=None, buses=None, out=None, jobs: int = 1):
    """Run every grid point in isolation; failures are recorded per row."""
    scenarios = sweep_scenarios(template, gammas, buses)
    outs = [None if out is None else Path(out) / sc.name for sc in scenarios]
    args = list(zip(scenarios, outs))
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_sweep_point, args))
    else:
        rows = [_sweep_point(a) for a in args]
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        write_sweep_report(rows, Path(out) / "sweep.csv")
    return rows


def write_sweep_report(rows, path):
    with open(path, "w") as fh:
        fh.write("label,bus,gamma,moved,reference_changes,slow_frequencies_hz,error\n")
        for r in rows:
            fh.write("%s,%s,%s,%s,%s,%s,%s\n" % (
                r.label, "" if r.bus is None else r.bus, "" if r.gamma is None else "%.17g" % r.gamma,
                " ".join(map(str, r.moved)), " ".join(f"{a}->{b}" for a, b in r.ref_changes),
                " ".join("%.6f" % f for f in r.frequencies), (r.error or "").replace(",", ";")))


def first_movers(case_name="ieee68", bus=66, gammas=(), extra_farms=(), r=5, scale_farms=False):
    """Smallest gamma in ``gammas`` at which some generator changes area.

    With ``scale_farms`` the gammas are multipliers applied to every farm in
    ``extra_farms`` instead of the gamma of a single farm at ``bus``.
    Returns (gamma, moved set (1-based), partition) or (None, (), None).
    """
    for g in gammas:
        if scale_farms:
            farms = tuple(FarmOverride(f.bus, f.gamma * g, f.nu) for f in extra_farms)
        else:
            farms = (FarmOverride(bus, g),) + tuple(extra_farms)
        sc = Scenario(case=case_name, farms=farms, r=r, modal=False, simulate=False, pca=False)
        res = run_pipeline(sc)
        if not res.ok:
            continue
        if res.moved:
            return g, tuple(sorted(i + 1 for i in res.moved)), res.partition
    return None, (), None


@dataclass(frozen=True)
class DriftReport:
    """How firmly each machine of a source area stays there versus a target area."""
    gamma: Optional[float]
    candidates: tuple           # 1-based machines examined
    margins: dict               # machine -> |V_L[i, src]| - |V_L[i, tgt]|
    nominal_margins: dict
    first_movers: tuple         # the k candidates with the smallest margin

    def mean_shift(self, machines):
        return float(np.mean([self.margins[i] - self.nominal_margins[i] for i in machines]))


def target_margins(partition: ch.CoherencyPartition, machines, src_anchor: int, tgt_anchor: int):
    """|V_L| weight on the anchor's area minus weight on the target anchor's area (1-based ids)."""
    lab = partition.labels
    a, b = lab[src_anchor - 1], lab[tgt_anchor - 1]
    VL = np.abs(partition.V_L)
    return {i: float(VL[i - 1, a] - VL[i - 1, b]) for i in machines}


def drift_sweep(farms_at, gammas, k, src_anchor=2, tgt_anchor=13, r=5, case="ieee68"):
    """Follow the source-area margins along a penetration sweep.

    ``farms_at(g)`` returns the farm overrides for grid value ``g``.  The
    report is taken at the largest grid value whose power flow converges
    (values are tried in order and the sweep stops at the first failure).
    Candidates are the nominal members of the anchor's area other than
    the anchor itself; the first movers are the k with the smallest margin.
    """
    base = run_pipeline(Scenario(case=case, r=r, modal=False, simulate=False, pca=False))
    if not base.ok:
        raise base.error
    nom = base.nominal
    src_area = nom.labels[src_anchor - 1]
    cands = tuple(i + 1 for i in range(nom.n) if nom.labels[i] == src_area and i + 1 != src_anchor)
    m0 = target_margins(nom, cands, src_anchor, tgt_anchor)
    last, last_g = None, None
    for g in gammas:
        res = run_pipeline(Scenario(case=case, farms=tuple(farms_at(g)), r=r, modal=False,
                                    simulate=False, pca=False))
        if not res.ok:
            break
        last, last_g = res, g
    margins = m0 if last is None else target_margins(last.partition, cands, src_anchor, tgt_anchor)
    order = sorted(cands, key=lambda i: (margins[i], i))
    return DriftReport(gamma=last_g, candidates=cands, margins=margins, nominal_margins=m0,
                       first_movers=tuple(sorted(order[:k])))
