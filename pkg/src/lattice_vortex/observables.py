"""Structure functions, velocity moments and cross-chain aggregation."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InsufficientSamplesError
from .lattice import LatticeSpec
from .stats import jackknife, n_blocks_for


def _velocity(sample) -> np.ndarray:
    return np.asarray(getattr(sample, "u", sample), dtype=float)


def longitudinal_increments(u: np.ndarray, spec: LatticeSpec) -> np.ndarray:
    """sf[axis, m-1] = node mean of (u_axis(x + m h e_axis) - u_axis(x))^2."""
    half = spec.N // 2
    out = np.empty((3, half))
    for axis in range(3):
        comp = u[axis]
        for m in range(1, half + 1):
            du = np.roll(comp, -m, axis=axis) - comp
            out[axis, m - 1] = np.mean(du * du)
    return out


def node_moments(u: np.ndarray, max_p: int) -> np.ndarray:
    """moments[c, p-1] = node mean of u_c^p."""
    out = np.empty((3, max_p))
    flat = u.reshape(3, -1)
    power = np.ones_like(flat)
    for p in range(max_p):
        power = power * flat
        out[:, p] = power.mean(axis=1)
    return out


def snapshot_reductions(u: np.ndarray, spec: LatticeSpec, max_p: int = 6):
    return node_moments(u, max_p), longitudinal_increments(u, spec)


@dataclass
class StructureFunction:
    separations: np.ndarray
    raw: np.ndarray
    raw_stderr: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    C: float
    u1_sq: float
    u_sq: float
    C_text: float
    C_isotropic: float
    n_samples: int

    @property
    def normalized(self) -> bool:
        return math.isfinite(self.C)

    def plateau(self) -> np.ndarray:
        q = max(1, len(self.values) // 4)
        return self.values[-q:]

    def rows(self):
        for r, raw, rerr, v, e in zip(self.separations, self.raw, self.raw_stderr,
                                      self.values, self.stderr):
            yield {"separation": r, "raw": raw, "raw_stderr": rerr,
                   "normalized": v, "stderr": e}


def _plateau_norm(raw_mean: np.ndarray) -> float:
    q = max(1, raw_mean.size // 4)
    level = float(np.mean(raw_mean[-q:]))
    return 1.0 / level if level > 0 else math.nan


def summarize_structure(sf_rows, u2_rows, spec: LatticeSpec, block_size: int = 100) -> StructureFunction:
    """Combine per-snapshot increments ``sf_rows`` (n, 3, N/2) and second moments ``u2_rows`` (n, 3)."""
    sf_rows = np.asarray(sf_rows, dtype=float)
    u2_rows = np.asarray(u2_rows, dtype=float)
    n = sf_rows.shape[0]
    if n == 0:
        raise InsufficientSamplesError("structure function needs at least one velocity sample")
    per_sample = sf_rows.mean(axis=1)
    raw = per_sample.mean(axis=0)
    u1_sq = float(u2_rows.mean())
    C = _plateau_norm(raw)
    if n >= 2:
        nb = n_blocks_for(n, block_size)
        _, raw_err = jackknife(per_sample, n_blocks=nb)
        if math.isfinite(C):
            _, err = jackknife(per_sample, lambda x: np.mean(x, axis=0) * _plateau_norm(np.mean(x, axis=0)), nb)
        else:
            err = np.full_like(raw, math.nan)
    else:
        raw_err = np.full_like(raw, math.nan)
        err = np.full_like(raw, math.nan)
    values = raw * C if math.isfinite(C) else np.full_like(raw, math.nan)
    u_sq = 3.0 * u1_sq
    return StructureFunction(
        separations=spec.h * np.arange(1, raw.size + 1),
        raw=raw, raw_stderr=raw_err, values=values, stderr=err, C=C,
        u1_sq=u1_sq, u_sq=u_sq,
        C_text=(4.0 / 3.0) / u_sq if u_sq > 0 else math.nan,
        C_isotropic=1.0 / (2.0 * u1_sq) if u1_sq > 0 else math.nan,
        n_samples=n)


def structure_function(samples, spec: LatticeSpec, block_size: int = 100) -> StructureFunction:
    """Longitudinal second-order structure function over velocity samples.

    ``samples`` holds FieldSolution objects or bare ``(3, N, N, N)`` velocity
    arrays.  Values are normalized so the largest quarter of separations
    averages to 1; ``C_text`` and ``C_isotropic`` are the alternative
    constants (4/3)/<|u|^2> and 1/(2<u_1^2>).
    """
    sf_rows, u2_rows = [], []
    for s in samples:
        u = _velocity(s)
        sf_rows.append(longitudinal_increments(u, spec))
        u2_rows.append(np.mean(u.reshape(3, -1) ** 2, axis=1))
    return summarize_structure(sf_rows, u2_rows, spec, block_size)


@dataclass
class MomentTable:
    """values[c, p-1] = <u_c^p> with jackknife stderr."""

    values: np.ndarray
    stderr: np.ndarray
    n_samples: int
    isotropy: dict = field(default_factory=dict)

    @property
    def max_p(self) -> int:
        return self.values.shape[1]

    def moment(self, p: int, component: int = 0) -> float:
        return float(self.values[component, p - 1])

    def error(self, p: int, component: int = 0) -> float:
        return float(self.stderr[component, p - 1])

    def flatness(self, component: int = 0) -> float:
        return self.moment(4, component) / self.moment(2, component) ** 2

    def rows(self):
        for p in range(1, self.max_p + 1):
            for c in range(3):
                yield {"p": p, "component": c + 1, "value": self.values[c, p - 1],
                       "stderr": self.stderr[c, p - 1]}


def _isotropy(values, stderr) -> dict:
    m2, e2 = values[:, 1], stderr[:, 1]
    worst = 0.0
    for a in range(3):
        for b in range(a + 1, 3):
            comb = math.hypot(e2[a], e2[b])
            if comb > 0:
                worst = max(worst, abs(m2[a] - m2[b]) / comb)
            elif m2[a] != m2[b]:
                worst = math.inf
    return {"second_moments": m2.tolist(), "max_pairwise_sigma": worst,
            "isotropic": worst <= 3.0}


def summarize_moments(rows, block_size: int = 100) -> MomentTable:
    rows = np.asarray(rows, dtype=float)
    n = rows.shape[0]
    if n < 2:
        raise InsufficientSamplesError(f"velocity moments need at least 2 samples, got {n}")
    mean, err = jackknife(rows, n_blocks=n_blocks_for(n, block_size))
    return MomentTable(mean, err, n, _isotropy(mean, err))


def velocity_moments(samples, spec: LatticeSpec, max_p: int = 6, block_size: int = 100) -> MomentTable:
    rows = [node_moments(_velocity(s), max_p) for s in samples]
    return summarize_moments(rows if rows else np.empty((0, 3, max_p)), block_size)


@dataclass
class Aggregate:
    value: np.ndarray
    stderr: np.ndarray
    scatter: np.ndarray
    n_chains: int
    n_independent: int
    duplicates: list
    discrepant: np.ndarray

    @property
    def any_discrepant(self) -> bool:
        return bool(np.any(self.discrepant))


def aggregate_chains(tables) -> Aggregate:
    """Inverse-variance merge of per-chain estimates.

    ``tables`` holds (value, stderr) pairs or objects with ``values``/``stderr``
    (or ``beta``/``stderr``).  Chains with bit-identical value and error arrays
    are treated as one fully correlated chain.  Entries deviating from the
    merged value by more than 3 combined sigma are flagged.
    """
    vals, errs = [], []
    for t in tables:
        if isinstance(t, tuple):
            v, e = t
        elif hasattr(t, "values"):
            v, e = t.values, t.stderr
        else:
            v, e = t.beta, t.stderr
        vals.append(np.asarray(v, dtype=float))
        errs.append(np.asarray(e, dtype=float))
    if not vals:
        raise InsufficientSamplesError("no chains to aggregate")
    keep, duplicates = [], []
    for i in range(len(vals)):
        for j in keep:
            if np.array_equal(vals[i], vals[j]) and np.array_equal(errs[i], errs[j]):
                duplicates.append((j, i))
                break
        else:
            keep.append(i)
    V = np.array([vals[i] for i in keep])
    E = np.array([errs[i] for i in keep])
    with np.errstate(divide="ignore", invalid="ignore"):
        w = 1.0 / E ** 2
        value = np.sum(w * V, axis=0) / np.sum(w, axis=0)
        stderr = 1.0 / np.sqrt(np.sum(w, axis=0))
        pull = np.abs(V - value) / np.sqrt(np.maximum(E ** 2 - stderr ** 2, 0.0) + stderr ** 2)
    scatter = V.std(axis=0, ddof=1) if len(keep) > 1 else np.zeros_like(value)
    discrepant = np.any(pull > 3.0, axis=0) if len(keep) > 1 else np.zeros(value.shape, bool)
    return Aggregate(value, stderr, scatter, len(vals), len(keep), duplicates, discrepant)


def write_csv(path, rows, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x
