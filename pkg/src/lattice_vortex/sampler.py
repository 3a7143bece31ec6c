"""Creutz-demon microcanonical sampling at fixed energy with a hard Z2 bound."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .exceptions import DegenerateHistogramError, InfeasibleConstraintError, InsufficientSamplesError
from .lattice import LatticeSpec, curl_forward
from .observables import snapshot_reductions
from .poisson import FieldSolution, GreenTable, kinetic_energy, solve_fields
from .stats import fit_binned_truncexp, jackknife, n_blocks_for, solve_beta_from_mean
from .vortex import Plaquette, VortexState, enstrophy_unit

log = logging.getLogger(__name__)

S2_UNBOUNDED = np.iinfo(np.int64).max // 4


@dataclass
class SamplerConfig:
    target_energy: float
    z2_bound: float = math.inf
    demon_cap: float | None = None
    seed: int = 0
    equilibration_sweeps: int = 1000
    measurement_sweeps: int = 10000
    sweep_size: int | None = None
    refresh_accepts: int = 10_000
    snapshot_stride: int = 1
    trace_per_sweep: int = 32
    batch_sweeps: int = 100
    max_p: int = 6
    fill_patience_sweeps: int = 50

    def __post_init__(self):
        if not self.target_energy > 0:
            raise ValueError(f"target_energy must be positive, got {self.target_energy}")
        if not self.z2_bound > 0:
            raise ValueError(f"z2_bound must be positive or infinite, got {self.z2_bound}")
        if self.demon_cap is None:
            self.demon_cap = self.target_energy / 10.0
        if not self.demon_cap > 0:
            raise ValueError(f"demon_cap must be positive, got {self.demon_cap}")
        for name in ("equilibration_sweeps", "measurement_sweeps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("refresh_accepts", "snapshot_stride", "batch_sweeps", "max_p"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.sweep_size is not None and self.sweep_size < 1:
            raise ValueError("sweep_size must be positive")

    def sweep_size_for(self, spec: LatticeSpec) -> int:
        return self.sweep_size or spec.n_plaquettes

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(d["z2_bound"]):
            d["z2_bound"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerConfig":
        d = dict(d)
        if d.get("z2_bound") in ("inf", None):
            d["z2_bound"] = math.inf
        return cls(**d)


@dataclass
class BetaEstimate:
    beta: float
    stderr: float
    method: str

    def __post_init__(self):
        if self.stderr < 0:
            raise ValueError("stderr must be non-negative")

    @property
    def temperature(self) -> float:
        return 1.0 / self.beta if self.beta != 0 else math.inf

    @property
    def negative(self) -> bool:
        return self.beta < 0


def s2_limit(z2_bound: float, spec: LatticeSpec, gamma: float) -> int:
    """Largest admissible sum(m**2) under ``Z2 <= z2_bound``."""
    if math.isinf(z2_bound):
        return S2_UNBOUNDED
    return int(math.floor(z2_bound / enstrophy_unit(spec, gamma) * (1 + 1e-12)))


@dataclass
class DemonState:
    """A running chain: lattice state, fields, demon energy and counters."""

    spec: LatticeSpec
    green: GreenTable
    state: VortexState
    psi: np.ndarray
    e_state: float
    e_demon: float
    e_total: float
    s2: int
    s2_max: int
    demon_cap: float
    rng: np.random.Generator
    proposals: int = 0
    accepted: int = 0
    rejected_energy: int = 0
    rejected_z2: int = 0
    accepted_since_refresh: int = 0
    refreshes: int = 0
    max_refresh_drift: float = 0.0
    sweeps_done: int = 0
    demon_means: list = field(default_factory=list)
    demon_trace: list = field(default_factory=list)

    @property
    def gamma(self) -> float:
        return self.state.gamma

    @property
    def z2(self) -> float:
        return enstrophy_unit(self.spec, self.gamma) * self.s2

    @property
    def z2_bound(self) -> float:
        if self.s2_max >= S2_UNBOUNDED:
            return math.inf
        return enstrophy_unit(self.spec, self.gamma) * self.s2_max

    @property
    def acceptance(self) -> float:
        return self.accepted / self.proposals if self.proposals else 0.0

    def velocity(self) -> np.ndarray:
        return curl_forward(self.psi, self.spec)

    def fields(self) -> FieldSolution:
        u = self.velocity()
        return FieldSolution(self.spec, self.gamma, self.psi.copy(), u, kinetic_energy(u, self.spec))

    def params(self, beta: float = 0.0, target: float = 0.0) -> np.ndarray:
        h = self.spec.h
        unit = self.state.unit
        return np.array([self.spec.N, unit, h ** 3 * unit,
                         self.green.plaquette_self_energy(self.gamma),
                         self.demon_cap, beta, target])

    def refresh(self) -> float:
        """Re-solve psi from the integer lattice and fold float drift into the demon.

        Returns the relative drift of state-plus-demon energy that was removed.
        """
        sol = solve_fields(self.state, self.green)
        drift = abs(self.e_state - sol.energy) / max(self.e_total, 1e-300)
        self.psi = sol.psi
        self.e_state = sol.energy
        self.e_demon = min(max(self.e_total - self.e_state, 0.0), self.demon_cap)
        self.e_total = self.e_state + self.e_demon
        self.accepted_since_refresh = 0
        self.refreshes += 1
        self.max_refresh_drift = max(self.max_refresh_drift, drift)
        return drift

    def draw(self, n: int):
        ids = self.rng.integers(0, self.spec.n_plaquettes, size=n)
        signs = self.rng.integers(0, 2, size=n) * 2 - 1
        return ids, signs

    def run_batch(self, ids, signs, mode=kernels.DEMON, uniforms=None, beta=0.0,
                  target=0.0, trace_stride=0):
        """Run proposals through the compiled kernel; returns (stats, trace)."""
        scalars = np.array([self.e_state, self.e_demon])
        s2_state = np.array([self.s2, self.s2_max], dtype=np.int64)
        stats = np.zeros(kernels.N_STATS)
        stats[kernels.ST_ED_MIN] = self.e_demon
        stats[kernels.ST_ED_MAX] = self.e_demon
        stats[kernels.ST_S2_MAX] = self.s2
        if uniforms is None:
            uniforms = np.empty(0)
        n_trace = 0 if trace_stride <= 0 else -(-len(ids) // trace_stride)
        trace = np.empty(n_trace)
        kernels.run_proposals(mode, self.state.m, self.psi, self.green.diffs,
                              np.ascontiguousarray(ids, dtype=np.int64),
                              np.ascontiguousarray(signs, dtype=np.int64),
                              uniforms, scalars, s2_state, self.params(beta, target),
                              stats, trace, trace_stride)
        self.e_state, self.e_demon = float(scalars[0]), float(scalars[1])
        self.s2 = int(s2_state[0])
        acc = int(stats[kernels.ST_ACCEPTED])
        self.proposals += len(ids)
        self.accepted += acc
        self.rejected_energy += int(stats[kernels.ST_REJ_ENERGY])
        self.rejected_z2 += int(stats[kernels.ST_REJ_Z2])
        self.accepted_since_refresh += acc
        return stats, trace

    def sweep(self, sweep_size: int, refresh_accepts: int, trace_stride: int = 0, **kw):
        ids, signs = self.draw(sweep_size)
        stats, trace = self.run_batch(ids, signs, trace_stride=trace_stride, **kw)
        if self.accepted_since_refresh >= refresh_accepts:
            self.refresh()
        self.sweeps_done += 1
        return stats, trace

    def checkpoint_extra(self) -> dict:
        return {
            "e_demon": self.e_demon,
            "e_total": self.e_total,
            "demon_cap": self.demon_cap,
            "s2_max": self.s2_max,
            "rng_state": self.rng.bit_generator.state,
            "counters": {
                "proposals": self.proposals, "accepted": self.accepted,
                "rejected_energy": self.rejected_energy, "rejected_z2": self.rejected_z2,
                "refreshes": self.refreshes, "sweeps_done": self.sweeps_done,
            },
        }

    @classmethod
    def from_checkpoint(cls, state: VortexState, extra: dict, green: GreenTable) -> "DemonState":
        """Rebuild a chain from a checkpoint; psi is re-solved from the lattice."""
        sol = solve_fields(state, green)
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = extra["rng_state"]
        c = extra["counters"]
        d = cls(state.spec, green, state, sol.psi, sol.energy, extra["e_demon"],
                extra["e_total"], int(np.sum(state.m * state.m)), int(extra["s2_max"]),
                extra["demon_cap"], rng, proposals=c["proposals"], accepted=c["accepted"],
                rejected_energy=c["rejected_energy"], rejected_z2=c["rejected_z2"],
                refreshes=c["refreshes"], sweeps_done=c["sweeps_done"])
        return d


def initialize(config: SamplerConfig, spec: LatticeSpec, gamma: float, green: GreenTable) -> DemonState:
    """Greedy random fill up to the target energy, respecting the Z2 bound.

    Raises InfeasibleConstraintError when the fill stalls further than
    ``demon_cap`` below the target.
    """
    state = VortexState(spec, gamma)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    d = DemonState(spec, green, state, np.zeros(spec.field_shape), 0.0, 0.0,
                   config.target_energy, 0, s2_limit(config.z2_bound, spec, gamma),
                   config.demon_cap, rng)
    target = config.target_energy
    eps = green.plaquette_self_energy(gamma)
    stop_gap = min(config.demon_cap, eps)
    batch = config.sweep_size_for(spec)
    idle = 0
    while target - d.e_state > stop_gap and idle < config.fill_patience_sweeps:
        ids, signs = d.draw(batch)
        stats, _ = d.run_batch(ids, signs, mode=kernels.GREEDY, target=target)
        idle = idle + 1 if stats[kernels.ST_ACCEPTED] == 0 else 0
        if d.accepted_since_refresh >= config.refresh_accepts:
            d.refresh()
    sol = solve_fields(state, green)
    d.psi, d.e_state = sol.psi, sol.energy
    gap = target - d.e_state
    if gap > config.demon_cap or gap < 0:
        raise InfeasibleConstraintError(
            f"fill stalled at E={d.e_state:.6g} (target {target:.6g}, demon cap "
            f"{config.demon_cap:.6g}) under z2_bound={config.z2_bound:.6g}")
    d.e_demon = gap
    d.e_total = target
    d.proposals = d.accepted = d.rejected_energy = d.rejected_z2 = 0
    d.accepted_since_refresh = 0
    log.debug("initialized N=%d: E=%.6g E_d=%.3g Z2=%.6g", spec.N, d.e_state, d.e_demon, d.z2)
    return d


def mc_step(d: DemonState, config: SamplerConfig | None = None, green: GreenTable | None = None,
            plaquette: Plaquette | None = None) -> bool:
    """One demon proposal; a fixed ``plaquette`` may be supplied instead of a random one."""
    N = d.spec.N
    if plaquette is None:
        ids, signs = d.draw(1)
    else:
        ids, signs = np.array([plaquette.index(N)]), np.array([plaquette.sign])
    stats, _ = d.run_batch(ids, signs)
    return bool(stats[kernels.ST_ACCEPTED])


def estimate_beta(d, method: str = "mean-relation", batch_sweeps: int | None = None) -> BetaEstimate:
    """Inverse temperature from the demon energy record of ``d``.

    ``d`` is anything with ``demon_means`` (per-sweep mean demon energy),
    ``demon_trace`` (strided instantaneous values) and ``demon_cap``.
    """
    means = np.asarray(d.demon_means, dtype=float)
    trace = np.asarray(d.demon_trace, dtype=float)
    cap = float(d.demon_cap)
    batch = batch_sweeps or getattr(d, "batch_sweeps", 100)
    if means.size < 2 or trace.size < 2:
        raise InsufficientSamplesError("no demon energy measurements recorded")
    if np.ptp(trace) == 0.0:
        raise DegenerateHistogramError(
            f"all demon energies equal {trace[0]:.6g}: cap too small or dynamics frozen")
    nb = n_blocks_for(means.size, batch)
    if method == "mean-relation":
        est = lambda x: _beta_from_mean(np.mean(x), cap)
        beta, err = jackknife(means, est, nb)
    elif method == "histogram-fit":
        upper = min(cap, float(trace.max()))
        bins = 40
        width = upper / bins

        def est(x):
            counts, _ = np.histogram(np.minimum(x, upper), bins=bins, range=(0.0, upper))
            return fit_binned_truncexp(counts, width)

        try:
            beta, err = jackknife(trace, est, nb)
        except ValueError as exc:
            raise DegenerateHistogramError(str(exc)) from exc
    else:
        raise ValueError(f"unknown method {method!r}")
    return BetaEstimate(float(beta), float(err), method)


def _beta_from_mean(mean, cap):
    try:
        return solve_beta_from_mean(mean, cap)
    except ValueError as exc:
        raise DegenerateHistogramError(str(exc)) from exc


@dataclass
class SampleLog:
    """Chain measurement record: one row per measured sweep plus observable snapshots.

    sweep columns: sweep, step, energy, demon_energy, demon_mean, z2,
    filament_length, lambda, acceptance.  Snapshots hold node-averaged
    velocity moments ``moments[c, p-1] = <u_c^p>`` and longitudinal squared
    increments ``sf[axis, m-1]`` for separations m*h, m = 1..N/2.
    """

    N: int
    gamma: float
    demon_cap: float
    batch_sweeps: int = 100
    sweeps: dict = field(default_factory=lambda: {k: [] for k in SWEEP_COLUMNS})
    demon_trace: list = field(default_factory=list)
    snapshot_sweeps: list = field(default_factory=list)
    moments: list = field(default_factory=list)
    sf: list = field(default_factory=list)

    @property
    def demon_means(self):
        return self.sweeps["demon_mean"]

    def __len__(self):
        return len(self.sweeps["sweep"])

    def column(self, name: str) -> np.ndarray:
        return np.asarray(self.sweeps[name], dtype=float)

    def moment_array(self) -> np.ndarray:
        return np.array(self.moments)

    def sf_array(self) -> np.ndarray:
        return np.array(self.sf)


SWEEP_COLUMNS = ("sweep", "step", "energy", "demon_energy", "demon_mean", "z2",
                 "filament_length", "lambda", "acceptance")


@dataclass
class ChainResult:
    demon: DemonState
    beta: BetaEstimate | None
    log: SampleLog
    beta_hist: BetaEstimate | None = None
    diagnostics: dict = field(default_factory=dict)


def _record_sweep(d: DemonState, log_: SampleLog, stats, n_props: int, trace):
    L = d.spec.h * float(np.abs(d.state.m).sum())
    E = d.e_state
    s = log_.sweeps
    s["sweep"].append(d.sweeps_done)
    s["step"].append(d.proposals)
    s["energy"].append(E)
    s["demon_energy"].append(d.e_demon)
    s["demon_mean"].append(stats[kernels.ST_ED_SUM] / n_props)
    s["z2"].append(d.z2)
    s["filament_length"].append(L)
    s["lambda"].append(L * math.sqrt(max(E, 0.0)) / d.gamma)
    s["acceptance"].append(stats[kernels.ST_ACCEPTED] / n_props)
    log_.demon_trace.extend(trace.tolist())


def continue_chain(d: DemonState, config: SamplerConfig, log_: SampleLog, n_sweeps: int,
                   monitor=None) -> None:
    """Advance ``d`` by ``n_sweeps`` measured sweeps, appending to ``log_``."""
    sweep_size = config.sweep_size_for(d.spec)
    stride = max(1, sweep_size // max(1, config.trace_per_sweep))
    for _ in range(n_sweeps):
        stats, trace = d.sweep(sweep_size, config.refresh_accepts, trace_stride=stride)
        d.demon_means.append(stats[kernels.ST_ED_SUM] / sweep_size)
        d.demon_trace.extend(trace.tolist())
        _record_sweep(d, log_, stats, sweep_size, trace)
        if (d.sweeps_done % config.snapshot_stride) == 0:
            mom, sf = snapshot_reductions(d.velocity(), d.spec, config.max_p)
            log_.snapshot_sweeps.append(d.sweeps_done)
            log_.moments.append(mom)
            log_.sf.append(sf)
        if monitor is not None:
            monitor(d, stats)


def equilibrate(d: DemonState, config: SamplerConfig, n_sweeps: int | None = None) -> None:
    sweep_size = config.sweep_size_for(d.spec)
    for _ in range(config.equilibration_sweeps if n_sweeps is None else n_sweeps):
        d.sweep(sweep_size, config.refresh_accepts)


def run_chain(config: SamplerConfig, spec: LatticeSpec, gamma: float, green: GreenTable,
              monitor=None) -> ChainResult:
    """initialize -> equilibrate -> measure; deterministic for a fixed seed."""
    d = initialize(config, spec, gamma, green)
    equilibrate(d, config)
    d.demon_means.clear()
    d.demon_trace.clear()
    log_ = SampleLog(spec.N, gamma, config.demon_cap, config.batch_sweeps)
    continue_chain(d, config, log_, config.measurement_sweeps, monitor=monitor)
    return finish_chain(d, log_)


def finish_chain(d: DemonState, log_: SampleLog) -> ChainResult:
    beta = beta_hist = None
    diagnostics = {}
    if len(log_) >= 2:
        try:
            beta = estimate_beta(log_, "mean-relation")
            beta_hist = estimate_beta(log_, "histogram-fit")
        except (DegenerateHistogramError, InsufficientSamplesError) as exc:
            diagnostics["beta_error"] = str(exc)
    diagnostics.update(acceptance=d.acceptance, max_refresh_drift=d.max_refresh_drift,
                       multi_covered_fraction=d.state.multi_covered_fraction())
    return ChainResult(d, beta, log_, beta_hist, diagnostics)


def canonical_chain(d: DemonState, beta: float, n_sweeps: int, equilibration_sweeps: int,
                    sweep_size: int | None = None, refresh_accepts: int = 10_000):
    """Metropolis cross-check at fixed ``beta`` starting from ``d`` (mutated in place).

    Returns per-sweep mean state energies of the measured sweeps.
    """
    sweep_size = sweep_size or d.spec.n_plaquettes
    energies = []
    for s in range(equilibration_sweeps + n_sweeps):
        ids, signs = d.draw(sweep_size)
        uni = d.rng.random(sweep_size)
        stats, _ = d.run_batch(ids, signs, mode=kernels.METROPOLIS, uniforms=uni, beta=beta)
        if d.accepted_since_refresh >= refresh_accepts:
            d.refresh()
            d.e_total = d.e_state
        if s >= equilibration_sweeps:
            energies.append(stats[kernels.ST_E_SUM] / sweep_size)
    return np.array(energies)
