"""CSV persistence of sample logs.

samples.csv      one row per measured sweep, columns SWEEP_COLUMNS
snapshots.csv    sweep, m{c}_{p} = <u_c^p>, sf{a}_{r} = <(du_a)^2> at separation r*h
demon_trace.csv  strided instantaneous demon energies
log_meta.json    N, gamma, demon_cap, batch_sweeps, max_p
Floats are written with repr() so files round-trip exactly.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .sampler import SWEEP_COLUMNS, SampleLog

LOG_FILES = ("samples.csv", "snapshots.csv", "demon_trace.csv", "log_meta.json")


def _f(x):
    return repr(float(x))


def write_sample_log(directory, log: SampleLog) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = [directory / name for name in LOG_FILES]
    with open(paths[0], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        cols = [log.sweeps[c] for c in SWEEP_COLUMNS]
        for row in zip(*cols):
            w.writerow([int(row[0]), int(row[1])] + [_f(x) for x in row[2:]])
    half = log.N // 2
    max_p = np.asarray(log.moments).shape[-1] if log.moments else 6
    header = (["sweep"] + [f"m{c + 1}_{p + 1}" for c in range(3) for p in range(max_p)]
              + [f"sf{a + 1}_{r + 1}" for a in range(3) for r in range(half)])
    with open(paths[1], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for sw, mom, sf in zip(log.snapshot_sweeps, log.moments, log.sf):
            w.writerow([int(sw)] + [_f(x) for x in np.ravel(mom)] + [_f(x) for x in np.ravel(sf)])
    with open(paths[2], "w") as fh:
        fh.write("demon_energy\n")
        fh.writelines(_f(x) + "\n" for x in log.demon_trace)
    meta = {"N": log.N, "gamma": log.gamma, "demon_cap": log.demon_cap,
            "batch_sweeps": log.batch_sweeps, "max_p": int(max_p)}
    paths[3].write_text(json.dumps(meta, sort_keys=True) + "\n")
    return paths


def read_sample_log(directory) -> SampleLog:
    directory = Path(directory)
    meta = json.loads((directory / "log_meta.json").read_text())
    log = SampleLog(meta["N"], meta["gamma"], meta["demon_cap"], meta["batch_sweeps"])
    with open(directory / "samples.csv", newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header) != SWEEP_COLUMNS:
            raise ValueError(f"{directory}: unexpected samples.csv header {header}")
        for row in r:
            log.sweeps["sweep"].append(int(row[0]))
            log.sweeps["step"].append(int(row[1]))
            for name, val in zip(SWEEP_COLUMNS[2:], row[2:]):
                log.sweeps[name].append(float(val))
    max_p, half = meta["max_p"], log.N // 2
    with open(directory / "snapshots.csv", newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for row in r:
            vals = np.array([float(x) for x in row[1:]])
            log.snapshot_sweeps.append(int(row[0]))
            log.moments.append(vals[:3 * max_p].reshape(3, max_p))
            log.sf.append(vals[3 * max_p:].reshape(3, half))
    with open(directory / "demon_trace.csv") as fh:
        next(fh)
        log.demon_trace.extend(float(line) for line in fh if line.strip())
    return log
