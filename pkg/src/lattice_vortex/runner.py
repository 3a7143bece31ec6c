"""Run configuration, checkpointed chains, output tables and manifests."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import ConfigError, LatticeVortexError
from .lattice import LatticeSpec
from .observables import aggregate_chains, summarize_moments, summarize_structure, write_csv
from .persist import read_sample_log, write_sample_log
from .poisson import build_green
from .sampler import (DemonState, SampleLog, SamplerConfig, continue_chain, equilibrate,
                      finish_chain, initialize)
from .targeting import ChainProbe, baseline_z2, home_in, load_table, save_table, tabulate
from .vortex import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

OUTPUT_ENV = "LVX_OUTPUT_DIR"
POLICIES = ("unbounded", "bound", "delta", "beta")


class Interrupted(LatticeVortexError):
    """Raised by the test hook that stops a run after a given sweep."""


@dataclass
class RunConfig:
    N: int = 8
    gamma: float = 2.0
    target_energy: float = 100.0
    z2_policy: str = "unbounded"
    z2_bound: float | None = None
    delta_z2: float | None = None
    beta_target: float | None = None
    delta_fractions: list = field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3])
    tolerance: float = 0.1
    demon_cap: float | None = None
    equilibration_sweeps: int = 200
    measurement_sweeps: int = 1000
    sweep_size: int | None = None
    snapshot_stride: int = 5
    batch_sweeps: int = 100
    refresh_accepts: int = 10_000
    seed: int = 1
    chains: int = 1
    checkpoint_every: int = 100
    output_dir: str = "runs/default"

    def validate(self) -> "RunConfig":
        try:
            LatticeSpec(self.N)
        except ValueError as exc:
            raise ConfigError(f"N: {exc}") from exc
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if not self.target_energy > 0:
            raise ConfigError(f"target_energy must be positive, got {self.target_energy}")
        if self.z2_policy not in POLICIES:
            raise ConfigError(f"z2_policy must be one of {POLICIES}, got {self.z2_policy!r}")
        need = {"bound": "z2_bound", "delta": "delta_z2", "beta": "beta_target"}.get(self.z2_policy)
        if need and getattr(self, need) is None:
            raise ConfigError(f"z2_policy={self.z2_policy} requires {need}")
        if self.z2_policy == "bound" and not self.z2_bound > 0:
            raise ConfigError(f"z2_bound must be positive, got {self.z2_bound}")
        if self.z2_policy == "beta" and len(self.delta_fractions) < 2:
            raise ConfigError("delta_fractions needs at least two entries to bracket beta_target")
        if self.chains < 1:
            raise ConfigError("chains must be >= 1")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        try:
            self.sampler_config(math.inf)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def sampler_config(self, z2_bound: float, seed: int | None = None) -> SamplerConfig:
        return SamplerConfig(
            target_energy=self.target_energy, z2_bound=z2_bound, demon_cap=self.demon_cap,
            seed=self.seed if seed is None else seed,
            equilibration_sweeps=self.equilibration_sweeps,
            measurement_sweeps=self.measurement_sweeps, sweep_size=self.sweep_size,
            refresh_accepts=self.refresh_accepts, snapshot_stride=self.snapshot_stride,
            batch_sweeps=self.batch_sweeps)

    def to_dict(self) -> dict:
        return asdict(self)

    def data_dict(self) -> dict:
        """Fields that influence data outputs (everything but the output location)."""
        d = self.to_dict()
        d.pop("output_dir")
        return d

    def hash(self) -> str:
        blob = json.dumps(self.data_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def seeds(self) -> list[int]:
        return [self.seed + i for i in range(self.chains)]

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc


def resolve_output_dir(cfg: RunConfig, explicit: str | None = None) -> Path:
    if explicit:
        return Path(explicit)
    if os.environ.get(OUTPUT_ENV):
        return Path(os.environ[OUTPUT_ENV])
    return Path(cfg.output_dir)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path, obj) -> Path:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    return Path(path)


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


CKPT = "checkpoint.lvx"


def run_chain_checkpointed(scfg: SamplerConfig, spec: LatticeSpec, gamma: float, green,
                           chain_dir: Path, checkpoint_every: int, config_hash: str,
                           interrupt_after: int | None = None):
    """run_chain with a checkpoint (lattice, RNG, demon, counters) every few sweeps.

    Each checkpoint re-solves psi first, so resuming from it reproduces the
    uninterrupted trajectory exactly.
    """
    chain_dir.mkdir(parents=True, exist_ok=True)
    ckpt = chain_dir / CKPT
    log_ = SampleLog(spec.N, gamma, scfg.demon_cap, scfg.batch_sweeps)
    if ckpt.exists():
        state, extra = load_checkpoint(ckpt)
        if extra.get("config_hash") != config_hash:
            raise ConfigError(f"{ckpt} was written by a different configuration")
        d = DemonState.from_checkpoint(state, extra, green)
        d.max_refresh_drift = extra.get("max_refresh_drift", 0.0)
        if d.sweeps_done > scfg.equilibration_sweeps:
            log_ = read_sample_log(chain_dir)
        d.demon_means = list(log_.demon_means)
        d.demon_trace = list(log_.demon_trace)
    else:
        d = initialize(scfg, spec, gamma, green)
    total = scfg.equilibration_sweeps + scfg.measurement_sweeps
    while d.sweeps_done < total:
        n = min(checkpoint_every - d.sweeps_done % checkpoint_every, total - d.sweeps_done)
        if d.sweeps_done < scfg.equilibration_sweeps:
            n = min(n, scfg.equilibration_sweeps - d.sweeps_done)
            equilibrate(d, scfg, n)
        else:
            continue_chain(d, scfg, log_, n)
        if d.sweeps_done % checkpoint_every == 0 or d.sweeps_done == total:
            d.refresh()
            extra = d.checkpoint_extra()
            extra["config_hash"] = config_hash
            extra["max_refresh_drift"] = d.max_refresh_drift
            save_checkpoint(ckpt, d.state, extra)
            if d.sweeps_done > scfg.equilibration_sweeps:
                write_sample_log(chain_dir, log_)
        if interrupt_after is not None and d.sweeps_done >= interrupt_after and d.sweeps_done < total:
            raise Interrupted(f"stopped after sweep {d.sweeps_done}")
    if not log_.sweeps["sweep"]:
        write_sample_log(chain_dir, log_)
    return finish_chain(d, log_)


def resolve_bound(cfg: RunConfig, spec: LatticeSpec, green, outdir: Path) -> tuple[float, dict]:
    """Turn the z2 policy into a concrete bound; delta/beta policies run a baseline first."""
    if cfg.z2_policy == "unbounded":
        return math.inf, {}
    if cfg.z2_policy == "bound":
        return float(cfg.z2_bound), {}
    table = outdir / "tabulation.json"
    if table.exists():
        records, meta = load_table(table)
        if meta.get("config_hash") == cfg.hash() and meta.get("z2_bound") is not None:
            return float(meta["z2_bound"]), meta
    scfg = cfg.sampler_config(math.inf)
    z20, z20_err, _ = baseline_z2(scfg, spec, cfg.gamma, green)
    meta = {"config_hash": cfg.hash(), "z20": z20, "z20_stderr": z20_err}
    if cfg.z2_policy == "delta":
        bound = z20 - float(cfg.delta_z2)
        records = []
    else:
        probe = ChainProbe(scfg, spec, cfg.gamma, green, z20)
        records = tabulate(probe, [f * z20 for f in cfg.delta_fractions])
        rec = home_in(probe, float(cfg.beta_target), records, cfg.tolerance)
        if rec not in records:
            records.append(rec)
        bound = rec.z2_bound
        meta["home_in"] = {"delta_z2": rec.delta_z2, "beta": rec.beta, "stderr": rec.stderr}
    meta["z2_bound"] = bound
    save_table(table, records, meta)
    return bound, meta


def _chain_summary(res, seed: int) -> dict:
    b, bh = res.beta, res.beta_hist
    summary = {
        "seed": seed,
        "beta": b.beta if b else None, "stderr": b.stderr if b else None,
        "beta_hist": bh.beta if bh else None, "stderr_hist": bh.stderr if bh else None,
        "negative_temperature": bool(b and b.beta < 0),
        "proposals": res.demon.proposals, "accepted": res.demon.accepted,
        "z2_bound": res.demon.z2_bound,
    }
    summary.update(res.diagnostics)
    return _clean(summary)


def cmd_run(cfg: RunConfig, outdir: Path | None = None, interrupt_after: int | None = None) -> dict:
    """Execute all chains and write logs, checkpoints, tables and the manifest."""
    cfg.validate()
    outdir = Path(outdir or resolve_output_dir(cfg))
    outdir.mkdir(parents=True, exist_ok=True)
    started = time.time()
    write_json(outdir / "run_config.json", cfg.to_dict())
    spec = LatticeSpec(cfg.N)
    green = build_green(spec)
    bound, bound_meta = resolve_bound(cfg, spec, green, outdir)
    results = []
    for i, seed in enumerate(cfg.seeds()):
        chain_dir = outdir / f"chain_{i:02d}"
        res = run_chain_checkpointed(cfg.sampler_config(bound, seed), spec, cfg.gamma, green,
                                     chain_dir, cfg.checkpoint_every, cfg.hash(), interrupt_after)
        write_json(chain_dir / "summary.json", _chain_summary(res, seed))
        results.append(res)
    write_observables(outdir, results, spec)
    return write_manifest(outdir, cfg, bound, started)


def cmd_resume(outdir) -> dict:
    outdir = Path(outdir)
    cfg = RunConfig.load(outdir / "run_config.json")
    return cmd_run(cfg, outdir)


def write_observables(outdir: Path, results, spec: LatticeSpec) -> None:
    rows = []
    for i, res in enumerate(results):
        b, bh = res.beta, res.beta_hist
        rows.append({"chain": i, "beta": b.beta if b else math.nan, "stderr": b.stderr if b else math.nan,
                     "beta_hist": bh.beta if bh else math.nan,
                     "stderr_hist": bh.stderr if bh else math.nan})
    ok = [r for r in results if r.beta is not None]
    if ok:
        agg = aggregate_chains([(r.beta.beta, r.beta.stderr) for r in ok])
        rows.append({"chain": "merged", "beta": float(agg.value), "stderr": float(agg.stderr),
                     "beta_hist": math.nan, "stderr_hist": math.nan})
    write_csv(outdir / "beta.csv", rows, ["chain", "beta", "stderr", "beta_hist", "stderr_hist"])
    tables, sf_rows, u2_rows, block = [], [], [], 1
    for res in results:
        mom = res.log.moment_array()
        if len(mom) >= 2:
            stride = max(1, res.log.snapshot_sweeps[1] - res.log.snapshot_sweeps[0])
            block = max(1, res.log.batch_sweeps // stride)
            tables.append(summarize_moments(mom, block))
            sf_rows.extend(res.log.sf)
            u2_rows.extend(mom[:, :, 1])
    if not tables:
        return
    agg = aggregate_chains(tables)
    write_csv(outdir / "moments.csv",
              ({"p": p + 1, "component": c + 1, "value": agg.value[c, p], "stderr": agg.stderr[c, p]}
               for p in range(agg.value.shape[1]) for c in range(3)),
              ["p", "component", "value", "stderr"])
    sf = summarize_structure(sf_rows, u2_rows, spec, block)
    write_csv(outdir / "structure_function.csv", sf.rows(),
              ["separation", "raw", "raw_stderr", "normalized", "stderr"])


def write_manifest(outdir: Path, cfg: RunConfig, bound: float, started: float) -> dict:
    files = []
    for p in sorted(outdir.rglob("*")):
        if p.is_file() and p.name != "manifest.json" and not p.name.endswith(".tmp"):
            files.append({"path": p.relative_to(outdir).as_posix(), "sha256": sha256_file(p),
                          "bytes": p.stat().st_size})
    manifest = {
        "config_hash": cfg.hash(), "software_version": __version__, "seeds": cfg.seeds(),
        "z2_bound": _clean(bound), "files": files,
        "wall_clock": {"started": started, "finished": time.time(),
                       "seconds": time.time() - started},
    }
    write_json(outdir / "manifest.json", manifest)
    return manifest


FIGURES = ("fig2", "fig3", "fig4", "moments")
DEFAULT_NS = (4, 8, 16)
DEFAULT_TARGETS = (3.0, 40.2)


def _scan(cfg: RunConfig):
    from .experiments import bound_scan
    scfg = cfg.sampler_config(math.inf)
    return bound_scan(cfg.N, scfg, scfg, cfg.gamma, cfg.delta_fractions)


def cmd_figure(figure_id: str, cfg: RunConfig, outdir: Path | None = None,
               Ns=None, targets=None) -> dict:
    """Run the experiment behind one figure and write its plot-ready CSV."""
    from .experiments import beta_vs_N, green_for, moment_table, structure_of
    if figure_id not in FIGURES:
        raise ConfigError(f"unknown figure {figure_id!r}; expected one of {FIGURES}")
    cfg.validate()
    outdir = Path(outdir or resolve_output_dir(cfg))
    outdir.mkdir(parents=True, exist_ok=True)
    started = time.time()
    write_json(outdir / "run_config.json", cfg.to_dict())
    meta = {"figure": figure_id}
    if figure_id == "fig2":
        Ns = list(Ns or DEFAULT_NS)
        res = beta_vs_N(Ns, cfg.sampler_config(math.inf), cfg.gamma)
        write_csv(outdir / "fig2_beta_vs_N.csv", res.rows(),
                  ["N", "beta", "stderr", "beta_hist", "stderr_hist", "mean_energy"])
        meta.update(Ns=Ns, slope=res.slope, slope_stderr=res.slope_stderr)
    elif figure_id == "fig3":
        scan = _scan(cfg)
        write_csv(outdir / "fig3_beta_vs_delta.csv", scan.rows(),
                  ["delta_z2", "delta_fraction", "z2_bound", "beta", "stderr", "beta_hist",
                   "stderr_hist", "mean_z2", "status"])
        meta.update(N=cfg.N, z20=scan.z20, z20_stderr=scan.z20_stderr)
    elif figure_id == "fig4":
        from .experiments import structure_at_targets
        targets = list(targets or DEFAULT_TARGETS)
        scan = _scan(cfg)
        curves = structure_at_targets(scan, targets, cfg.tolerance)
        rows = []
        for c in curves:
            for r in c.structure.rows():
                rows.append({"beta_target": c.beta_target, "beta": c.record.beta,
                             "beta_stderr": c.record.stderr, "z2_bound": c.record.z2_bound, **r})
        write_csv(outdir / "fig4_structure.csv", rows,
                  ["beta_target", "beta", "beta_stderr", "z2_bound", "separation", "raw",
                   "raw_stderr", "normalized", "stderr"])
        meta.update(N=cfg.N, z20=scan.z20, targets=targets)
    else:
        from .sampler import run_chain
        spec = LatticeSpec(cfg.N)
        chain = run_chain(cfg.sampler_config(math.inf), spec, cfg.gamma, green_for(cfg.N))
        table = moment_table(chain)
        write_csv(outdir / "moments.csv", table.rows(), ["p", "component", "value", "stderr"])
        sf = structure_of(chain)
        meta.update(N=cfg.N, flatness=table.flatness(0), u1_sq=table.moment(2, 0),
                    beta=chain.beta.beta if chain.beta else None,
                    structure_constant=sf.C, isotropy=table.isotropy)
    write_json(outdir / f"{figure_id}_meta.json", _clean(meta))
    return write_manifest(outdir, cfg, math.nan, started)


def cmd_tabulate(cfg: RunConfig, outdir: Path | None = None) -> dict:
    """beta(delta_z2) table over cfg.delta_fractions * Z20, homed in on beta_target if set."""
    cfg.validate()
    outdir = Path(outdir or resolve_output_dir(cfg))
    outdir.mkdir(parents=True, exist_ok=True)
    started = time.time()
    write_json(outdir / "run_config.json", cfg.to_dict())
    scan = _scan(cfg)
    records = list(scan.records)
    meta = {"config_hash": cfg.hash(), "z20": scan.z20, "z20_stderr": scan.z20_stderr}
    if cfg.beta_target is not None:
        rec = home_in(scan.probe, float(cfg.beta_target), records, cfg.tolerance)
        if rec not in records:
            records.append(rec)
        meta["home_in"] = {"delta_z2": rec.delta_z2, "z2_bound": rec.z2_bound,
                           "beta": rec.beta, "stderr": rec.stderr}
        meta["z2_bound"] = rec.z2_bound
    save_table(outdir / "tabulation.json", records, _clean(meta))
    write_csv(outdir / "tabulation.csv", (asdict(r) for r in sorted(records, key=lambda r: r.z2_bound)),
              ["delta_z2", "z2_bound", "z20", "beta", "stderr", "beta_hist", "stderr_hist",
               "mean_z2", "status", "message"])
    return write_manifest(outdir, cfg, meta.get("z2_bound", math.nan), started)


def cmd_validate(green_fault: bool = False, stream=None):
    """Run the fast invariant suite and print one line per check."""
    import sys
    from .validation import run_validation
    stream = stream or sys.stdout
    rep = run_validation(green_fault=green_fault)
    for c in rep.checks:
        print(c.line(), file=stream)
    print(f"{len(rep.checks) - len(rep.failed())}/{len(rep.checks)} checks passed "
          f"in {rep.seconds:.2f} s", file=stream)
    return rep
