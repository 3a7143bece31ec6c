"""Periodic N^3 lattice geometry and the discrete differential operators.

Fields are plain float64 arrays of shape ``(3, N, N, N)``: component first,
then node indices ``(i, j, k)`` in C order, so the flat layout is k-fastest.
An edge from node x to x + h e_k stores its value at node x, component k.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LatticeSpec:
    """Periodic cubic lattice with N nodes per side and period 1."""

    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise ValueError(f"N must be an integer >= 2, got {self.N!r}")
        object.__setattr__(self, "N", int(self.N))

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.N, self.N, self.N)

    @property
    def field_shape(self) -> tuple[int, int, int, int]:
        return (3, self.N, self.N, self.N)

    @property
    def n_nodes(self) -> int:
        return self.N ** 3

    @property
    def n_plaquettes(self) -> int:
        return 3 * self.N ** 3

    def wrap(self, idx):
        """Reduce node indices modulo N in every direction."""
        return tuple(int(i) % self.N for i in idx)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.field_shape)


def _as_field(f, spec: LatticeSpec) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.shape != spec.field_shape:
        raise ValueError(f"expected field of shape {spec.field_shape}, got {f.shape}")
    return f


def forward_diff(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    """(D+ f)(x) = [f(x + h e_axis) - f(x)] / h on a periodic scalar lattice."""
    return (np.roll(f, -1, axis=axis) - f) / h


def backward_diff(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    """(D- f)(x) = [f(x) - f(x - h e_axis)] / h on a periodic scalar lattice."""
    return (f - np.roll(f, 1, axis=axis)) / h


def laplacian_scalar(f: np.ndarray, h: float) -> np.ndarray:
    out = -6.0 * f
    for axis in range(3):
        out = out + np.roll(f, 1, axis=axis) + np.roll(f, -1, axis=axis)
    return out / (h * h)


def laplacian6(f, spec: LatticeSpec) -> np.ndarray:
    """Componentwise 6-point Laplacian with periodic wrap."""
    f = _as_field(f, spec)
    return np.stack([laplacian_scalar(f[c], spec.h) for c in range(3)])


def curl_forward(psi, spec: LatticeSpec) -> np.ndarray:
    """u = curl(psi) built from forward differences, e.g. u_1 = D2+ psi_3 - D3+ psi_2."""
    psi = _as_field(psi, spec)
    h = spec.h
    u = np.empty_like(psi)
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        u[a] = forward_diff(psi[c], b, h) - forward_diff(psi[b], c, h)
    return u


def curl_backward(v, spec: LatticeSpec) -> np.ndarray:
    """Adjoint of curl_forward under the plain node-sum inner product."""
    v = _as_field(v, spec)
    h = spec.h
    out = np.empty_like(v)
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        out[a] = backward_diff(v[c], b, h) - backward_diff(v[b], c, h)
    return out


def div_backward(f, spec: LatticeSpec) -> np.ndarray:
    """Sum_k D_k- f_k; annihilates curl_forward fields and closed edge loops."""
    f = _as_field(f, spec)
    return sum(backward_diff(f[k], k, spec.h) for k in range(3))


def div_forward(f, spec: LatticeSpec) -> np.ndarray:
    """Sum_k D_k+ f_k; annihilates curl_forward fields, so the velocity is solenoidal in this sense."""
    f = _as_field(f, spec)
    return sum(forward_diff(f[k], k, spec.h) for k in range(3))
