import math
import warnings

import numpy as np
import pytest

from lattice_vortex.exceptions import BracketError
from lattice_vortex.lattice import LatticeSpec
from lattice_vortex.poisson import build_green
from lattice_vortex.sampler import SamplerConfig
from lattice_vortex.targeting import (ChainProbe, TabulationRecord, baseline_z2, home_in,
                                      load_table, save_table, tabulate)

Z20 = 1000.0


class LinearProbe:
    """beta(delta) = a - b * delta plus Gaussian noise of size ``noise`` / sqrt(factor)."""

    def __init__(self, a=40.0, b=0.04, noise=0.0, seed=0):
        self.a, self.b, self.noise = a, b, noise
        self.rng = np.random.default_rng(seed)
        self.calls = []

    def __call__(self, delta, sweep_factor=1):
        self.calls.append((float(delta), sweep_factor))
        sd = self.noise / math.sqrt(sweep_factor)
        beta = self.a - self.b * delta + (self.rng.normal(0, sd) if sd else 0.0)
        return TabulationRecord(delta_z2=float(delta), z2_bound=Z20 - delta, z20=Z20,
                                beta=beta, stderr=max(sd, 1e-3), seed=1,
                                measurement_sweeps=100 * sweep_factor)


def test_target_equal_to_unconstrained_returns_baseline():
    probe = LinearProbe()
    recs = tabulate(probe, [0, 250, 500, 750])
    n = len(probe.calls)
    rec = home_in(probe, 40.0, recs)
    assert rec.delta_z2 == 0.0 and len(probe.calls) == n


@pytest.mark.parametrize("target", [3.0, 12.5, 33.0])
def test_bisection_converges_noiseless(target):
    probe = LinearProbe()
    recs = tabulate(probe, [0, 300, 600, 950])
    n0 = len(probe.calls)
    rec = home_in(probe, target, recs, tolerance=0.01)
    assert abs(rec.beta - target) <= 0.01 * target
    assert len(probe.calls) - n0 <= 10


@pytest.mark.parametrize("seed", range(5))
def test_bisection_with_noise_stays_in_bracket(seed):
    # noise at 10% of the response range on the coarse grid spacing
    probe = LinearProbe(noise=0.1 * 0.04 * 300, seed=seed)
    recs = tabulate(probe, [0, 300, 600, 900])
    n0 = len(probe.calls)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rec = home_in(probe, 20.0, recs, tolerance=0.1)
    assert abs(rec.beta - 20.0) <= max(2.0, 2 * rec.stderr)
    probed = [d for d, _ in probe.calls[n0:]]
    assert all(0 <= d <= 900 for d in probed)
    assert len(set(probed)) <= 20


def test_rerun_with_doubled_sweeps():
    class Bumpy(LinearProbe):
        def __call__(self, delta, sweep_factor=1):
            rec = super().__call__(delta, sweep_factor)
            if delta not in (0, 300, 600, 900):
                # coarse probes miss by 15% with a large error bar; doubled runs land
                rec.beta = 20.0 * (1.15 if sweep_factor == 1 else 1.01)
                rec.stderr = 4.0 if sweep_factor == 1 else 0.2
            return rec

    probe = Bumpy()
    recs = tabulate(probe, [0, 300, 600, 900])
    rec = home_in(probe, 20.0, recs, tolerance=0.1)
    assert rec.measurement_sweeps == 200
    assert (probe.calls[-1][1]) == 2


def test_bracket_error():
    probe = LinearProbe()
    recs = tabulate(probe, [0, 100])
    with pytest.raises(BracketError):
        home_in(probe, 1.0, recs)


def test_non_monotone_warns():
    class Wiggle(LinearProbe):
        def __call__(self, delta, sweep_factor=1):
            rec = super().__call__(delta, sweep_factor)
            if 0 < delta < 300 or 300 < delta < 600:
                rec.beta = 45.0
            return rec

    probe = Wiggle()
    recs = tabulate(probe, [0, 300, 600, 900])
    with pytest.warns(UserWarning):
        home_in(probe, 20.0, recs, max_iter=3)


def test_table_roundtrip(tmp_path):
    probe = LinearProbe()
    recs = tabulate(probe, [500, 0, 250])
    recs.append(TabulationRecord(delta_z2=2000.0, z2_bound=-1000.0, z20=Z20, status="infeasible"))
    path = save_table(tmp_path / "t.json", recs, {"z20": Z20})
    loaded, meta = load_table(path)
    assert meta == {"z20": Z20}
    assert [r.z2_bound for r in loaded] == sorted(r.z2_bound for r in recs)
    assert loaded[0].status == "infeasible" and math.isnan(loaded[0].beta)
    assert loaded[-1].beta == 40.0


SPEC4 = LatticeSpec(4)
GREEN4 = build_green(SPEC4)


def real_cfg(**kw):
    base = dict(target_energy=100.0, seed=5, equilibration_sweeps=20, measurement_sweeps=100,
                batch_sweeps=5, snapshot_stride=5)
    base.update(kw)
    return SamplerConfig(**base)


def test_baseline_seeds_agree():
    z_a, e_a, _ = baseline_z2(real_cfg(seed=1), SPEC4, 2.0, GREEN4)
    z_b, e_b, _ = baseline_z2(real_cfg(seed=2), SPEC4, 2.0, GREEN4)
    assert e_a < 0.05 * z_a
    assert abs(z_a - z_b) <= 2 * math.hypot(e_a, e_b) + 1e-9 * z_a


def test_real_probe_records_and_infeasibility():
    z20, _, base = baseline_z2(real_cfg(), SPEC4, 2.0, GREEN4)
    probe = ChainProbe(real_cfg(), SPEC4, 2.0, GREEN4, z20)
    recs = tabulate(probe, [0.0, 0.2 * z20, 0.9 * z20, 1.5 * z20])
    by_delta = {r.delta_z2: r for r in recs}
    assert by_delta[1.5 * z20].status == "infeasible"
    assert by_delta[0.9 * z20].status == "infeasible"
    ok = by_delta[0.0]
    # a bound at Z20 clips the upward Z2 fluctuations, which can only heat the system
    assert ok.mean_z2 <= z20
    assert ok.beta <= base.beta.beta + 2 * math.hypot(ok.stderr, base.beta.stderr)
    assert ok.beta >= 0.7 * base.beta.beta
    assert by_delta[0.2 * z20].beta < ok.beta
    # reproducible from its metadata
    again = ChainProbe(real_cfg(), SPEC4, 2.0, GREEN4, z20)(0.2 * z20)
    assert again.beta == by_delta[0.2 * z20].beta
