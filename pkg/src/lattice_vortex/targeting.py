"""Tabulate beta against the enstrophy bound and home in on a target beta."""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .exceptions import BracketError, InfeasibleConstraintError, LatticeVortexError
from .lattice import LatticeSpec
from .poisson import GreenTable
from .sampler import SamplerConfig, run_chain
from .stats import jackknife, n_blocks_for

log = logging.getLogger(__name__)

TABLE_VERSION = 1


@dataclass
class TabulationRecord:
    delta_z2: float
    z2_bound: float
    z20: float
    beta: float = math.nan
    stderr: float = math.nan
    beta_hist: float = math.nan
    stderr_hist: float = math.nan
    mean_z2: float = math.nan
    status: str = "ok"
    message: str = ""
    seed: int = 0
    equilibration_sweeps: int = 0
    measurement_sweeps: int = 0

    @property
    def ok(self) -> bool:
        return self.status == "ok" and math.isfinite(self.beta)


def baseline_z2(config: SamplerConfig, spec: LatticeSpec, gamma: float, green: GreenTable):
    """Unconstrained chain; returns (Z20, stderr, ChainResult)."""
    cfg = replace(config, z2_bound=math.inf)
    result = run_chain(cfg, spec, gamma, green)
    z2 = result.log.column("z2")
    if z2.size < 2:
        raise LatticeVortexError("baseline chain recorded fewer than two sweeps")
    mean, err = jackknife(z2, n_blocks=n_blocks_for(z2.size, config.batch_sweeps))
    return float(mean), float(err), result


class ChainProbe:
    """Runs one bounded chain per requested delta_z2 = z20 - bound.

    All probes share ``config.seed``: common random numbers keep the
    beta(delta) response smooth across the grid.
    """

    def __init__(self, config: SamplerConfig, spec: LatticeSpec, gamma: float,
                 green: GreenTable, z20: float):
        self.config = config
        self.spec = spec
        self.gamma = gamma
        self.green = green
        self.z20 = z20
        self.results = {}

    def __call__(self, delta: float, sweep_factor: int = 1) -> TabulationRecord:
        bound = self.z20 - delta
        sweeps = self.config.measurement_sweeps * sweep_factor
        rec = TabulationRecord(delta_z2=float(delta), z2_bound=float(bound), z20=self.z20,
                               seed=self.config.seed,
                               equilibration_sweeps=self.config.equilibration_sweeps,
                               measurement_sweeps=sweeps)
        if bound <= 0:
            rec.status, rec.message = "infeasible", "z2_bound is not positive"
            return rec
        cfg = replace(self.config, z2_bound=bound, measurement_sweeps=sweeps)
        try:
            res = run_chain(cfg, self.spec, self.gamma, self.green)
        except InfeasibleConstraintError as exc:
            rec.status, rec.message = "infeasible", str(exc)
            return rec
        self.results[(float(delta), sweep_factor)] = res
        rec.mean_z2 = float(np.mean(res.log.column("z2")))
        if res.beta is None:
            rec.status, rec.message = "error", res.diagnostics.get("beta_error", "no estimate")
            return rec
        rec.beta, rec.stderr = res.beta.beta, res.beta.stderr
        if res.beta_hist is not None:
            rec.beta_hist, rec.stderr_hist = res.beta_hist.beta, res.beta_hist.stderr
        if rec.beta < 0:
            rec.message = "negative temperature"
        log.info("probe delta=%.6g bound=%.6g beta=%.4g +- %.2g", delta, bound, rec.beta, rec.stderr)
        return rec


def tabulate(probe, deltas) -> list[TabulationRecord]:
    """One probe per delta; infeasible or failed probes are recorded, not raised."""
    records = [probe(float(d)) for d in deltas]
    return sorted(records, key=lambda r: r.z2_bound)


def _accepts(rec: TabulationRecord, target: float, tolerance: float) -> bool:
    return rec.ok and abs(rec.beta - target) <= max(tolerance * abs(target), 2.0 * rec.stderr)


def home_in(probe, beta_target: float, records, tolerance: float = 0.1,
            max_iter: int = 20, max_reruns: int = 2) -> TabulationRecord:
    """Noise-aware bisection in delta_z2 between tabulated records straddling ``beta_target``.

    beta is expected to decrease as delta_z2 grows.  A probe within
    ``tolerance * target`` is accepted; one that is only within 2 stderr is
    re-run with doubled sweeps (up to ``max_reruns`` times) before being
    accepted.  Probes never leave the [lo, hi] bracket.
    """
    usable = sorted((r for r in records if r.ok), key=lambda r: r.delta_z2)
    close = [r for r in usable if abs(r.beta - beta_target) <= tolerance * abs(beta_target)]
    if close:
        return min(close, key=lambda r: abs(r.beta - beta_target))
    lo = hi = None
    for a, b in zip(usable, usable[1:]):
        if a.beta >= beta_target >= b.beta:
            lo, hi = a, b
            break
    if lo is None:
        for r in usable:
            if _accepts(r, beta_target, tolerance):
                return r
        span = [round(r.beta, 4) for r in usable]
        raise BracketError(f"no tabulated pair straddles beta={beta_target}; betas {span}")
    best = min((lo, hi), key=lambda r: abs(r.beta - beta_target))
    for _ in range(max_iter):
        mid = 0.5 * (lo.delta_z2 + hi.delta_z2)
        rec = probe(mid)
        factor = 1
        for _ in range(max_reruns):
            if not rec.ok:
                break
            miss = abs(rec.beta - beta_target)
            if miss <= tolerance * abs(beta_target) or miss > 2.0 * rec.stderr:
                break
            factor *= 2
            rec = probe(mid, factor)
        if not rec.ok:
            # a failed interior probe is taken as lying past the target
            warnings.warn(f"probe at delta_z2={mid:.6g} failed: {rec.message}")
            hi = replace(hi, delta_z2=mid)
            continue
        if abs(rec.beta - beta_target) < abs(best.beta - beta_target):
            best = rec
        if _accepts(rec, beta_target, tolerance):
            return rec
        noise = 2.0 * math.hypot(rec.stderr, max(lo.stderr, hi.stderr))
        if rec.beta > lo.beta + noise or rec.beta < hi.beta - noise:
            warnings.warn(f"beta not monotone in delta_z2 near {mid:.6g} (beta={rec.beta:.4g})")
        if rec.beta > beta_target:
            lo = rec
        else:
            hi = rec
    warnings.warn(f"home_in hit the iteration cap; best beta {best.beta:.4g}")
    return best


def save_table(path, records, meta: dict | None = None) -> Path:
    path = Path(path)
    doc = {"version": TABLE_VERSION, "meta": meta or {},
           "records": [_jsonable(asdict(r)) for r in sorted(records, key=lambda r: r.z2_bound)]}
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def load_table(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != TABLE_VERSION:
        raise ValueError(f"{path}: unsupported table version {doc.get('version')}")
    recs = [TabulationRecord(**{k: (math.nan if v is None else v) for k, v in r.items()})
            for r in doc["records"]]
    return recs, doc.get("meta", {})


def _jsonable(d):
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}
