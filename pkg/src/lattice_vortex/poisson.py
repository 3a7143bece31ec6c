"""Periodic lattice Green's function, field solves and incremental energies.

psi solves lap6(psi) = -xi with zero lattice mean per component and
u = curl_forward(psi).  Internally the energy is (h^3/2) sum(xi . psi), which
equals (h^3/2) sum |u|^2 for divergence-free xi.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .exceptions import CompatibilityError
from .lattice import LatticeSpec, curl_forward, laplacian_scalar
from .vortex import PLANES, Plaquette, VortexState, plaquette_edges


def lattice_eigenvalues(spec: LatticeSpec) -> np.ndarray:
    """Eigenvalues of -lap6 on the Fourier modes, shape (N, N, N)."""
    n = np.arange(spec.N)
    s = (2.0 - 2.0 * np.cos(2.0 * np.pi * n / spec.N)) / spec.h ** 2
    return s[:, None, None] + s[None, :, None] + s[None, None, :]


@dataclass
class GreenTable:
    spec: LatticeSpec
    G: np.ndarray

    @cached_property
    def G_hat(self) -> np.ndarray:
        return np.fft.fftn(self.G)

    @cached_property
    def diffs(self) -> np.ndarray:
        """diffs[d](y) = G(y) - G(y - e_d): response of one oriented edge pair."""
        return np.stack([self.G - np.roll(self.G, 1, axis=d) for d in range(3)])

    def at(self, di: int, dj: int, dk: int) -> float:
        N = self.spec.N
        return float(self.G[di % N, dj % N, dk % N])

    def residual(self) -> float:
        """max |-lap6 G - (delta_0 - 1/N^3)|, scaled to the unit-source size."""
        target = np.full(self.spec.shape, -1.0 / self.spec.n_nodes)
        target[0, 0, 0] += 1.0
        return float(np.max(np.abs(-laplacian_scalar(self.G, self.spec.h) - target)))

    def check(self, tol: float = 1e-10) -> float:
        r = self.residual()
        if not r <= tol:
            raise ValueError(f"Green table Poisson residual {r:.3e} exceeds {tol:.0e}")
        return r

    def plaquette_self_energy(self, gamma: float) -> float:
        """Energy of a single isolated loop of circulation gamma."""
        unit_energy = gamma * gamma / self.spec.h
        return 2.0 * unit_energy * (self.at(0, 0, 0) - self.at(1, 0, 0))


def build_green(spec: LatticeSpec, check: bool = True) -> GreenTable:
    lam = lattice_eigenvalues(spec)
    inv = np.zeros_like(lam)
    nz = lam > 0
    inv[nz] = 1.0 / lam[nz]
    G = np.fft.ifftn(inv).real
    # exact cubic symmetry regardless of FFT round-off
    G = (G + np.transpose(G, (1, 2, 0)) + np.transpose(G, (2, 0, 1))) / 3.0
    G = 0.5 * (G + np.transpose(G, (0, 2, 1)))
    green = GreenTable(spec, np.ascontiguousarray(G))
    if check:
        green.check()
    return green


def convolve(green: GreenTable, f: np.ndarray) -> np.ndarray:
    """Periodic convolution (G * f)(x) = sum_y G(x - y) f(y), componentwise."""
    f_hat = np.fft.fftn(f, axes=(-3, -2, -1))
    return np.fft.ifftn(f_hat * green.G_hat, axes=(-3, -2, -1)).real


@dataclass
class FieldSolution:
    spec: LatticeSpec
    gamma: float
    psi: np.ndarray
    u: np.ndarray = field(repr=False)
    energy: float

    def energy_from_psi(self, state: VortexState) -> float:
        """(h^3 / 2) sum(xi . psi), the internal energy definition."""
        return 0.5 * self.spec.h ** 3 * state.unit * float(np.sum(state.m * self.psi))

    def copy(self) -> "FieldSolution":
        return FieldSolution(self.spec, self.gamma, self.psi.copy(), self.u.copy(), self.energy)


def kinetic_energy(u: np.ndarray, spec: LatticeSpec) -> float:
    return 0.5 * spec.h ** 3 * float(np.sum(u * u))


def solve_fields(state: VortexState, green: GreenTable) -> FieldSolution:
    spec = state.spec
    if spec != green.spec:
        raise ValueError("state and Green table live on different lattices")
    totals = state.m.sum(axis=(1, 2, 3))
    if np.any(totals != 0):
        raise CompatibilityError(f"vorticity has nonzero component sums {totals.tolist()}")
    psi = convolve(green, state.vorticity())
    u = curl_forward(psi, spec)
    return FieldSolution(spec, state.gamma, psi, u, kinetic_energy(u, spec))


def energy_delta(state: VortexState, sol: FieldSolution, p: Plaquette, green: GreenTable) -> float:
    """E(state + p) - E(state) from four psi reads and the loop self-energy."""
    spec = state.spec
    cross = 0.0
    for comp, i, j, k, orient in plaquette_edges(p, spec.N):
        cross += orient * sol.psi[comp, i, j, k]
    cross *= p.sign * spec.h ** 3 * state.unit
    return cross + green.plaquette_self_energy(state.gamma)


def refresh_psi(sol: FieldSolution, p: Plaquette, green: GreenTable) -> FieldSolution:
    """Fold an accepted plaquette into ``sol`` in place (psi, u and energy)."""
    spec = sol.spec
    N = spec.N
    unit = sol.gamma / spec.h ** 2
    cross = 0.0
    for comp, i, j, k, orient in plaquette_edges(p, N):
        cross += orient * sol.psi[comp, i, j, k]
    sol.energy += p.sign * spec.h ** 3 * unit * cross + green.plaquette_self_energy(sol.gamma)
    a, b = PLANES[p.plane]
    x = (p.i % N, p.j % N, p.k % N)
    amp = p.sign * unit
    # edge a at x (+) and x+e_b (-); edge b at x+e_a (+) and x (-)
    sol.psi[a] += amp * np.roll(green.diffs[b], x, axis=(0, 1, 2))
    sol.psi[b] -= amp * np.roll(green.diffs[a], x, axis=(0, 1, 2))
    sol.u = curl_forward(sol.psi, spec)
    return sol
