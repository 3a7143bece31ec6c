"""Acceptance gate: the eight criteria at their stated tolerances.

Chains are shared across criteria through module fixtures.  Budgets are desk
scale: the whole module runs in a few minutes on one core.
"""
import math

import numpy as np
import pytest

from lattice_vortex import kernels
from lattice_vortex.experiments import (beta_vs_N, bound_scan, green_for, moment_table,
                                        structure_at_targets)
from lattice_vortex.lattice import LatticeSpec, div_backward
from lattice_vortex.poisson import solve_fields
from lattice_vortex.sampler import (SamplerConfig, canonical_chain, estimate_beta, initialize,
                                    run_chain)
from lattice_vortex.stats import jackknife, n_blocks_for, sample_truncexp
from lattice_vortex.validation import DenseOracle
from lattice_vortex.vortex import Plaquette, apply_plaquette, enstrophy_unit, random_state

GAMMA = 2.0
E_H = 100.0
UNCONSTRAINED = SamplerConfig(target_energy=E_H, seed=1, equilibration_sweeps=400,
                              measurement_sweeps=2000, snapshot_stride=5, batch_sweeps=100)
PROBE = SamplerConfig(target_energy=E_H, seed=2, equilibration_sweeps=200,
                      measurement_sweeps=800, snapshot_stride=4, batch_sweeps=50)
FRACTIONS = [0.0, 0.05, 0.10, 0.15, 0.20, 0.25]
TARGETS = [3.0, 40.2]


@pytest.fixture(scope="module")
def beta_n():
    return beta_vs_N([4, 8, 16], UNCONSTRAINED, GAMMA)


@pytest.fixture(scope="module")
def scan16(beta_n):
    return bound_scan(16, UNCONSTRAINED, PROBE, GAMMA, FRACTIONS, baseline=beta_n.results[16])


@pytest.fixture(scope="module")
def curves(scan16):
    return structure_at_targets(scan16, TARGETS, tolerance=0.1)


def test_criterion_1_equipartition_scaling(beta_n, record_criterion):
    betas = {N: r.beta.beta for N, r in beta_n.results.items()}
    slope = beta_n.slope
    ok = abs(slope - 3.0) <= 0.5
    detail = (f"slope {slope:.3f} +- {beta_n.slope_stderr:.3f} (target 3.0 +- 0.5); "
              + ", ".join(f"beta(N={N})={b:.4g}" for N, b in betas.items()))
    record_criterion(1, ok, detail)
    assert ok, detail


def test_criterion_2_enstrophy_bound_heating(scan16, record_criterion):
    recs = sorted(scan16.records, key=lambda r: r.delta_z2)[:len(FRACTIONS)]
    assert all(r.ok for r in recs), [r.message for r in recs if not r.ok]
    betas = np.array([r.beta for r in recs])
    errs = np.array([r.stderr for r in recs])
    inversions, unexplained = 0, 0
    for i in range(len(recs) - 1):
        if betas[i + 1] > betas[i]:
            inversions += 1
            if betas[i + 1] - betas[i] > 2.0 * math.hypot(errs[i], errs[i + 1]):
                unexplained += 1
    ratio = betas.max() / betas.min() if betas.min() > 0 else math.inf
    ok = len(recs) >= 5 and inversions <= 1 and unexplained == 0 and ratio >= 5.0
    detail = (f"{len(recs)} bounds, inversions {inversions} (beyond 2 sigma: {unexplained}), "
              f"max/min beta {ratio:.2f}; betas " + " ".join(f"{b:.3g}" for b in betas))
    record_criterion(2, ok, detail)
    assert ok, detail


def test_criterion_3_moment_identities(beta_n, record_criterion):
    t = moment_table(beta_n.results[16])
    u2 = t.moment(2)
    checks = {"u1^2": abs(u2 - 200.0 / 3.0) <= 0.05 * 200.0 / 3.0}
    for p in (1, 3, 5):
        checks[f"odd p={p}"] = abs(t.moment(p)) <= 3.0 * t.error(p)
    checks["even positive"] = t.moment(4) > 0 and t.moment(6) > 0
    flat = t.flatness(0)
    rows = beta_n.results[16].log.moment_array()
    _, flat_err = jackknife(rows, lambda x: x[:, 0, 3].mean() / x[:, 0, 1].mean() ** 2,
                            n_blocks=n_blocks_for(len(rows), 20))
    checks["flatness > 3"] = flat > 3.0
    ok = all(checks.values())
    detail = (f"<u1^2>={u2:.3f}+-{t.error(2):.2f}, <u1^4>={t.moment(4):.4g}, "
              f"<u1^6>={t.moment(6):.4g}, flatness={flat:.3f}+-{flat_err:.3f}, odd/stderr="
              + ",".join(f"{t.moment(p) / t.error(p):.2f}" for p in (1, 3, 5))
              + ("" if ok else f"; failed {[k for k, v in checks.items() if not v]}"))
    record_criterion(3, ok, detail)
    assert ok, detail


def _shape_ok(sf):
    R = sf.values
    q = max(1, len(R) // 4)
    plateau = float(np.mean(R[-q:]))
    top = int(np.argmax(R >= 0.98 * plateau))
    rising = bool(np.all(np.diff(R[:top + 1]) > 0))
    tail = bool(np.all((R[top:] >= 0.8) & (R[top:] <= 1.2)))
    iso = float(np.mean(sf.raw[-q:] * sf.C_isotropic))
    checks = {
        "monotone to plateau": rising,
        "plateau 1 +- 0.2": abs(plateau - 1.0) <= 0.2 and tail,
        "isotropic plateau 1 +- 0.2": abs(iso - 1.0) <= 0.2,
        "no spike": R[0] < 0.9 * plateau,
    }
    return checks, plateau, iso


def test_criterion_4_structure_function_shape(curves, record_criterion):
    parts, ok = [], True
    for c in curves:
        checks, plateau, iso = _shape_ok(c.structure)
        ok &= all(checks.values()) and abs(c.record.beta - c.beta_target) <= 0.1 * c.beta_target
        parts.append(f"target {c.beta_target}: beta {c.record.beta:.3g} (dZ2 {c.record.delta_z2:.4g}) "
                     f"R=[{', '.join(f'{v:.3f}' for v in c.structure.values)}] "
                     f"iso-plateau {iso:.3f}"
                     + ("" if all(checks.values()) else f" failed {[k for k, v in checks.items() if not v]}"))
    detail = "; ".join(parts)
    record_criterion(4, ok, detail)
    assert ok, detail


def test_criterion_5_oracle_equivalence(record_criterion):
    spec = LatticeSpec(4)
    green = green_for(4)
    oracle = DenseOracle(spec)
    rng = np.random.default_rng(2024)
    worst_e = 0.0
    n_states = 0
    while n_states < 100:
        st = random_state(spec, 1.0, int(rng.integers(1, 60)), rng)
        if st.is_empty():
            continue
        n_states += 1
        e = solve_fields(st, green).energy
        worst_e = max(worst_e, abs(e - oracle.energy(st)) / oracle.energy(st))
    st = random_state(spec, 1.0, 40, rng)
    sol = solve_fields(st, green)
    h3unit = spec.h ** 3 * st.unit
    eps = green.plaquette_self_energy(1.0)
    worst_d = 0.0
    for _ in range(1000):
        pid, sign = int(rng.integers(spec.n_plaquettes)), int(rng.choice([-1, 1]))
        dE, _ = kernels.proposal_terms(st.m, sol.psi, pid, sign, 4, h3unit, eps)
        apply_plaquette(st, Plaquette.from_index(pid, sign, 4))
        new = solve_fields(st, green)
        full = new.energy - sol.energy
        worst_d = max(worst_d, abs(dE - full) / abs(full))
        sol = new
    ok = worst_e <= 1e-10 and worst_d <= 1e-10
    detail = f"spectral vs dense {worst_e:.2e} over 100 states; incremental vs full {worst_d:.2e} over 1000 moves"
    record_criterion(5, ok, detail)
    assert ok, detail


@pytest.fixture(scope="module")
def bounded8():
    spec = LatticeSpec(8)
    green = green_for(8)
    base = run_chain(SamplerConfig(E_H, seed=7, equilibration_sweeps=100, measurement_sweeps=200,
                                   batch_sweeps=20), spec, GAMMA, green)
    bound = 0.9 * float(np.mean(base.log.column("z2")))
    cfg = SamplerConfig(E_H, z2_bound=bound, seed=8, equilibration_sweeps=50,
                        measurement_sweeps=100, batch_sweeps=10, refresh_accepts=10_000)
    seen = {"drift": 0.0, "ed_min": math.inf, "ed_max": -math.inf, "s2_top": 0, "proposals": 0}

    def monitor(d, stats):
        fresh = solve_fields(d.state, green).energy
        seen["drift"] = max(seen["drift"], abs(fresh + d.e_demon - d.e_total) / d.e_total)
        seen["ed_min"] = min(seen["ed_min"], stats[kernels.ST_ED_MIN])
        seen["ed_max"] = max(seen["ed_max"], stats[kernels.ST_ED_MAX])
        seen["s2_top"] = max(seen["s2_top"], int(stats[kernels.ST_S2_MAX]))
        seen["proposals"] += spec.n_plaquettes

    res = run_chain(cfg, spec, GAMMA, green, monitor=monitor)
    return res, seen, base


def test_criterion_6_sampler_invariants(bounded8, record_criterion):
    res, seen, _ = bounded8
    d = res.demon
    measured = seen["proposals"]
    div = float(np.max(np.abs(div_backward(d.state.vorticity(), d.spec))))
    checks = {
        "proposals >= 1e5": measured >= 100_000,
        "conservation": seen["drift"] <= 1e-8,
        "demon range": seen["ed_min"] >= 0.0 and seen["ed_max"] <= d.demon_cap,
        "z2 bound": seen["s2_top"] <= d.s2_max and np.all(res.log.column("z2") <= d.z2_bound),
        "div xi": div == 0.0,
    }
    ok = all(checks.values())
    detail = (f"{measured} measured proposals, max drift {seen['drift']:.2e}, "
              f"E_d in [{seen['ed_min']:.3g}, {seen['ed_max']:.3g}] cap {d.demon_cap:.3g}, "
              f"max Z2 {seen['s2_top'] * enstrophy_unit(d.spec, GAMMA):.6g} <= {d.z2_bound:.6g}, div {div}"
              + ("" if ok else f"; failed {[k for k, v in checks.items() if not v]}"))
    record_criterion(6, ok, detail)
    assert ok, detail


class _Synthetic:
    def __init__(self, beta, cap, rng, n_sweeps=500, per_sweep=256, trace_stride=8):
        x = sample_truncexp(beta, cap, n_sweeps * per_sweep, rng).reshape(n_sweeps, per_sweep)
        self.demon_means = x.mean(axis=1)
        self.demon_trace = x[:, ::trace_stride].ravel()
        self.demon_cap = cap
        self.batch_sweeps = 25


def test_criterion_7_beta_calibration(beta_n, bounded8, record_criterion):
    rng = np.random.default_rng(77)
    parts, ok = [], True
    for beta in (0.5, 5.0, 50.0):
        syn = _Synthetic(beta, 1.0, rng)
        for method in ("mean-relation", "histogram-fit"):
            est = estimate_beta(syn, method)
            hit = abs(est.beta - beta) <= 2.0 * est.stderr
            ok &= hit
            parts.append(f"{method} beta {beta}: {est.beta:.4g}+-{est.stderr:.2g}")
    for label, chain in (("N=8 unconstrained", beta_n.results[8]), ("N=8 bounded", bounded8[0])):
        a, b = chain.beta.beta, chain.beta_hist.beta
        rel = abs(a - b) / abs(a)
        ok &= rel <= 0.10
        parts.append(f"{label}: mean {a:.4g} hist {b:.4g} rel diff {rel:.3f}")
    detail = "; ".join(parts)
    record_criterion(7, ok, detail)
    assert ok, detail


def test_criterion_8_ensemble_equivalence(beta_n, record_criterion):
    micro = beta_n.results[8]
    beta = micro.beta.beta
    e_micro = float(np.mean(micro.log.column("energy")))
    spec = LatticeSpec(8)
    d = initialize(SamplerConfig(E_H, seed=11), spec, GAMMA, green_for(8))
    energies = canonical_chain(d, beta, n_sweeps=1000, equilibration_sweeps=300)
    e_can = float(np.mean(energies))
    rel = abs(e_can - e_micro) / e_micro
    ok = rel <= 0.05
    detail = f"beta {beta:.4g}: microcanonical <E> {e_micro:.4f}, canonical <E> {e_can:.4f}, rel diff {rel:.4f}"
    record_criterion(8, ok, detail)
    assert ok, detail
