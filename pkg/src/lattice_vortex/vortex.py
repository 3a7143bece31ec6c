"""Configurations of elementary plaquette vortex loops.

The state is the integer multiplicity lattice ``m`` of shape ``(3, N, N, N)``;
the vorticity on edge (x, k) is ``m[k, x] * gamma / h**2``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .lattice import LatticeSpec

# plane index -> (a, b): the loop runs +e_a, +e_b, -e_a, -e_b (normal e_a x e_b)
PLANES = ((0, 1), (1, 2), (2, 0))
PLANE_NAMES = ("12", "23", "31")


class Plaquette(NamedTuple):
    i: int
    j: int
    k: int
    plane: int
    sign: int = 1

    @classmethod
    def from_index(cls, index: int, sign: int, N: int) -> "Plaquette":
        """Decode a flat plaquette id ``plane * N**3 + (i*N + j)*N + k``."""
        plane, rest = divmod(int(index), N ** 3)
        i, rest = divmod(rest, N * N)
        j, k = divmod(rest, N)
        return cls(i, j, k, plane, sign)

    def index(self, N: int) -> int:
        return self.plane * N ** 3 + (self.i * N + self.j) * N + self.k

    def reversed(self) -> "Plaquette":
        return self._replace(sign=-self.sign)


def plaquette_edges(p: Plaquette, N: int):
    """The four (component, i, j, k, orientation) edges bounding ``p``."""
    if p.plane not in (0, 1, 2):
        raise ValueError(f"plane must be 0, 1 or 2, got {p.plane}")
    if p.sign not in (1, -1):
        raise ValueError(f"sign must be +1 or -1, got {p.sign}")
    a, b = PLANES[p.plane]
    x = [p.i % N, p.j % N, p.k % N]
    xa = list(x)
    xa[a] = (xa[a] + 1) % N
    xb = list(x)
    xb[b] = (xb[b] + 1) % N
    return [
        (a, *x, 1),
        (b, *xa, 1),
        (a, *xb, -1),
        (b, *x, -1),
    ]


def check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not np.isfinite(gamma) or gamma <= 0:
        raise ValueError(f"circulation must be positive and finite, got {gamma}")
    return gamma


@dataclass
class VortexState:
    spec: LatticeSpec
    gamma: float
    m: np.ndarray = field(default=None)

    def __post_init__(self):
        self.gamma = check_gamma(self.gamma)
        if self.m is None:
            self.m = np.zeros(self.spec.field_shape, dtype=np.int64)
        else:
            m = np.asarray(self.m)
            if m.shape != self.spec.field_shape:
                raise ValueError(f"multiplicity lattice must have shape {self.spec.field_shape}")
            if not np.issubdtype(m.dtype, np.integer):
                raise TypeError("multiplicities must be integers")
            self.m = np.ascontiguousarray(m, dtype=np.int64)

    @property
    def unit(self) -> float:
        """Vorticity carried by one unit of edge multiplicity, gamma / h**2."""
        return self.gamma / self.spec.h ** 2

    def vorticity(self) -> np.ndarray:
        return self.m * self.unit

    def copy(self) -> "VortexState":
        return VortexState(self.spec, self.gamma, self.m.copy())

    def is_empty(self) -> bool:
        return not self.m.any()

    def __eq__(self, other):
        if not isinstance(other, VortexState):
            return NotImplemented
        return (self.spec == other.spec and self.gamma == other.gamma
                and np.array_equal(self.m, other.m))

    def translated(self, shift) -> "VortexState":
        return VortexState(self.spec, self.gamma, np.roll(self.m, shift, axis=(1, 2, 3)))

    def multi_covered_fraction(self) -> float:
        """Fraction of occupied edges carrying |m| > 1."""
        occupied = np.count_nonzero(self.m)
        if occupied == 0:
            return 0.0
        return np.count_nonzero(np.abs(self.m) > 1) / occupied


def apply_plaquette(state: VortexState, p: Plaquette) -> VortexState:
    """Add one loop of circulation ``p.sign * gamma`` around ``p`` in place."""
    for comp, i, j, k, orient in plaquette_edges(p, state.spec.N):
        state.m[comp, i, j, k] += orient * p.sign
    return state


def delta_sum_m2(state: VortexState, p: Plaquette) -> int:
    """Change of sum(m**2) if ``p`` were applied."""
    s = 0
    for comp, i, j, k, orient in plaquette_edges(p, state.spec.N):
        s += int(state.m[comp, i, j, k]) * orient
    return 4 + 2 * p.sign * s


def enstrophy_unit(spec: LatticeSpec, gamma: float) -> float:
    """Z2 per unit of sum(m**2): h**3 * (gamma / h**2)**2 = gamma**2 / h."""
    return gamma * gamma / spec.h


def enstrophy_z2(state: VortexState, spec: LatticeSpec | None = None) -> float:
    spec = spec or state.spec
    return enstrophy_unit(spec, state.gamma) * float(np.sum(state.m * state.m))


def filament_length(state: VortexState, spec: LatticeSpec | None = None) -> float:
    """Total filament length; an edge carrying multiplicity m counts |m| times."""
    spec = spec or state.spec
    return spec.h * float(np.abs(state.m).sum())


def lambda_parameter(state: VortexState, energy: float, spec: LatticeSpec | None = None) -> float:
    """Order parameter L * sqrt(E) / gamma."""
    if state.gamma == 0:
        raise ValueError("circulation must be nonzero")
    if energy < 0:
        raise ValueError(f"energy must be non-negative, got {energy}")
    return filament_length(state, spec) * np.sqrt(energy) / state.gamma


def random_state(spec: LatticeSpec, gamma: float, n_loops: int, rng) -> VortexState:
    """Superpose ``n_loops`` uniformly random plaquettes with random signs."""
    state = VortexState(spec, gamma)
    ids = rng.integers(0, spec.n_plaquettes, size=n_loops)
    signs = rng.choice([-1, 1], size=n_loops)
    for idx, s in zip(ids, signs):
        apply_plaquette(state, Plaquette.from_index(idx, int(s), spec.N))
    return state


# Checkpoint layout: MAGIC | uint32 version | uint32 header length | JSON header
# | N**3 * 3 little-endian int64 multiplicities in (component, i, j, k) C order.
MAGIC = b"LVXSTATE"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, state: VortexState, extra: dict | None = None) -> Path:
    path = Path(path)
    header = {
        "N": state.spec.N,
        "gamma": state.gamma,
        "dtype": "<i8",
        "order": "component,i,j,k",
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(state.m.astype("<i8").tobytes(order="C"))
    tmp.replace(path)
    return path


def load_checkpoint(path) -> tuple[VortexState, dict]:
    """Inverse of :func:`save_checkpoint`; returns the state and the ``extra`` dict."""
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a lattice vortex checkpoint")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode())
        spec = LatticeSpec(header["N"])
        raw = fh.read()
    expected = 8 * 3 * spec.N ** 3
    if len(raw) != expected:
        raise ValueError(f"{path}: truncated lattice payload ({len(raw)} of {expected} bytes)")
    m = np.frombuffer(raw, dtype="<i8").reshape(spec.field_shape).astype(np.int64)
    return VortexState(spec, header["gamma"], m), header["extra"]
