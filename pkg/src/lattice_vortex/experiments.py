"""Experiment sweeps behind the figure data: beta vs N, beta vs Z2 bound,
structure functions at target beta, and the velocity-moment table."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .lattice import LatticeSpec
from .observables import MomentTable, StructureFunction, summarize_moments, summarize_structure
from .poisson import build_green
from .sampler import ChainResult, SamplerConfig, run_chain
from .stats import jackknife, n_blocks_for
from .targeting import ChainProbe, TabulationRecord, baseline_z2, home_in, tabulate

_greens = {}


def green_for(N: int):
    if N not in _greens:
        _greens[N] = build_green(LatticeSpec(N))
    return _greens[N]


def fit_power_law(Ns, betas):
    """Unweighted least-squares slope of log(beta) against log(N), with its stderr."""
    x, y = np.log(np.asarray(Ns, float)), np.log(np.asarray(betas, float))
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    dof = len(x) - 2
    if dof > 0:
        resid = y - A @ coef
        s2 = float(resid @ resid) / dof
        err = math.sqrt(s2 / float(np.sum((x - x.mean()) ** 2)))
    else:
        err = math.nan
    return float(coef[0]), err


@dataclass
class BetaVsN:
    Ns: list
    results: dict
    slope: float
    slope_stderr: float

    def rows(self):
        for N in self.Ns:
            r = self.results[N]
            yield {"N": N, "beta": r.beta.beta, "stderr": r.beta.stderr,
                   "beta_hist": r.beta_hist.beta, "stderr_hist": r.beta_hist.stderr,
                   "mean_energy": float(np.mean(r.log.column("energy")))}


def beta_vs_N(Ns, template: SamplerConfig, gamma: float, known: dict | None = None) -> BetaVsN:
    """Unconstrained chains at fixed energy for each lattice size."""
    results = dict(known or {})
    for N in Ns:
        if N not in results:
            cfg = replace(template, z2_bound=math.inf)
            results[N] = run_chain(cfg, LatticeSpec(N), gamma, green_for(N))
    slope, err = fit_power_law(Ns, [results[N].beta.beta for N in Ns])
    return BetaVsN(list(Ns), results, slope, err)


@dataclass
class BoundScan:
    N: int
    z20: float
    z20_stderr: float
    baseline: ChainResult
    records: list
    probe: ChainProbe = field(repr=False)

    def rows(self):
        for r in sorted(self.records, key=lambda r: r.delta_z2):
            yield {"delta_z2": r.delta_z2, "delta_fraction": r.delta_z2 / self.z20,
                   "z2_bound": r.z2_bound, "beta": r.beta, "stderr": r.stderr,
                   "beta_hist": r.beta_hist, "stderr_hist": r.stderr_hist,
                   "mean_z2": r.mean_z2, "status": r.status}


def bound_scan(N: int, baseline_cfg: SamplerConfig, probe_cfg: SamplerConfig, gamma: float,
               fractions, baseline: ChainResult | None = None) -> BoundScan:
    """Baseline Z20 from an unconstrained chain, then one chain per delta = fraction * Z20."""
    spec, green = LatticeSpec(N), green_for(N)
    if baseline is None:
        z20, z20_err, baseline = baseline_z2(baseline_cfg, spec, gamma, green)
    else:
        z2 = baseline.log.column("z2")
        nb = n_blocks_for(z2.size, baseline_cfg.batch_sweeps)
        z20, z20_err = (float(v) for v in jackknife(z2, n_blocks=nb))
    probe = ChainProbe(probe_cfg, spec, gamma, green, z20)
    records = tabulate(probe, [f * z20 for f in fractions])
    return BoundScan(N, z20, z20_err, baseline, records, probe)


@dataclass
class TargetCurve:
    beta_target: float
    record: TabulationRecord
    structure: StructureFunction
    chain: ChainResult


def structure_at_targets(scan: BoundScan, targets, tolerance: float = 0.1) -> list[TargetCurve]:
    out = []
    spec = LatticeSpec(scan.N)
    for target in targets:
        rec = home_in(scan.probe, target, scan.records, tolerance)
        if rec not in scan.records:
            scan.records.append(rec)
        chain = _chain_for(scan.probe, rec)
        mom = chain.log.moment_array()
        sf = summarize_structure(chain.log.sf_array(), mom[:, :, 1], spec,
                                 _block(chain))
        out.append(TargetCurve(target, rec, sf, chain))
    return out


def _chain_for(probe: ChainProbe, rec: TabulationRecord) -> ChainResult:
    factor = rec.measurement_sweeps // probe.config.measurement_sweeps
    return probe.results[(rec.delta_z2, max(1, factor))]


def _block(chain: ChainResult) -> int:
    log = chain.log
    stride = 1
    if len(log.snapshot_sweeps) > 1:
        stride = max(1, log.snapshot_sweeps[1] - log.snapshot_sweeps[0])
    return max(1, log.batch_sweeps // stride)


def moment_table(chain: ChainResult) -> MomentTable:
    return summarize_moments(chain.log.moment_array(), _block(chain))


def structure_of(chain: ChainResult) -> StructureFunction:
    mom = chain.log.moment_array()
    return summarize_structure(chain.log.sf_array(), mom[:, :, 1], LatticeSpec(chain.log.N), _block(chain))
