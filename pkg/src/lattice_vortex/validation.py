"""Fast invariant suite and the dense linear-solve oracle.

The oracle builds the 6-point Laplacian and forward-difference curl as
explicit matrices and solves the singular periodic system by least squares,
sharing no code with the FFT path.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .lattice import LatticeSpec, curl_backward, curl_forward, div_backward, div_forward, laplacian6
from .poisson import GreenTable, build_green, energy_delta, solve_fields
from . import kernels
from .sampler import SamplerConfig, initialize
from .vortex import Plaquette, VortexState, apply_plaquette, random_state


def _node(i, j, k, N):
    return ((i % N) * N + (j % N)) * N + (k % N)


def dense_laplacian(spec: LatticeSpec) -> np.ndarray:
    N, n = spec.N, spec.n_nodes
    A = np.zeros((n, n))
    for i in range(N):
        for j in range(N):
            for k in range(N):
                r = _node(i, j, k, N)
                A[r, r] -= 6.0
                for d in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                    A[r, _node(i + d[0], j + d[1], k + d[2], N)] += 1.0
    return A / spec.h ** 2


def dense_forward_diff(spec: LatticeSpec, axis: int) -> np.ndarray:
    N, n = spec.N, spec.n_nodes
    D = np.zeros((n, n))
    for i in range(N):
        for j in range(N):
            for k in range(N):
                r = _node(i, j, k, N)
                x = [i, j, k]
                x[axis] += 1
                D[r, _node(*x, N)] += 1.0
                D[r, r] -= 1.0
    return D / spec.h


class DenseOracle:
    """Direct least-squares solution of lap(psi) = -xi and its kinetic energy."""

    def __init__(self, spec: LatticeSpec):
        self.spec = spec
        self.A = dense_laplacian(spec)
        self.A_pinv = np.linalg.pinv(self.A)
        self.D = [dense_forward_diff(spec, a) for a in range(3)]

    def psi(self, xi: np.ndarray) -> np.ndarray:
        n = self.spec.n_nodes
        return np.stack([(self.A_pinv @ (-xi[c].reshape(n))).reshape(self.spec.shape)
                         for c in range(3)])

    def energy(self, state: VortexState) -> float:
        n = self.spec.n_nodes
        psi = self.psi(state.vorticity()).reshape(3, n)
        u = np.empty_like(psi)
        for a in range(3):
            b, c = (a + 1) % 3, (a + 2) % 3
            u[a] = self.D[b] @ psi[c] - self.D[c] @ psi[b]
        return 0.5 * self.spec.h ** 3 * float(np.sum(u * u))


@dataclass
class Check:
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"{mark}  {self.name:<34s} measured={self.measured:.3e}  tol={self.tolerance:.0e}  {self.detail}"


@dataclass
class Report:
    checks: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self):
        return [c.name for c in self.checks if not c.passed]

    def add(self, name, measured, tol, detail=""):
        self.checks.append(Check(name, bool(measured <= tol), float(measured), tol, detail))


def run_validation(N_oracle: int = 4, n_states: int = 30, n_moves: int = 1000, seed: int = 12345,
                   green_fault: bool = False) -> Report:
    """Operator identities, oracle equivalence, demon conservation and Z2 safety.

    ``green_fault`` corrupts one Green-table entry to exercise the failure path.
    """
    t0 = time.perf_counter()
    rep = Report()
    rng = np.random.default_rng(seed)
    spec = LatticeSpec(N_oracle)

    psi = rng.standard_normal(spec.field_shape)
    scale = np.max(np.abs(psi)) / spec.h ** 2
    rep.add("div_forward(curl_forward) = 0",
            np.max(np.abs(div_forward(curl_forward(psi, spec), spec))) / scale, 1e-13)
    rep.add("div_backward(curl_backward) = 0",
            np.max(np.abs(div_backward(curl_backward(psi, spec), spec))) / scale, 1e-13)
    f, g = rng.standard_normal((2, *spec.field_shape))
    lhs, rhs = np.sum(f * laplacian6(g, spec)), np.sum(laplacian6(f, spec) * g)
    rep.add("laplacian6 symmetry", abs(lhs - rhs) / abs(lhs), 1e-12)

    green = build_green(spec, check=False)
    if green_fault:
        G = green.G.copy()
        G[1, 2, 3 % spec.N] += 1e-3 * abs(G[0, 0, 0])
        green = GreenTable(spec, G)
    rep.add("Green table Poisson residual", green.residual(), 1e-10)

    sections = (_oracle_checks, _chain_checks)
    for section in sections:
        try:
            section(rep, spec, green, rng, n_states, n_moves, seed)
        except Exception as exc:  # a broken table may break a section outright
            rep.checks.append(Check(section.__name__.strip('_'), False, float('nan'), 0.0, repr(exc)))
    rep.seconds = time.perf_counter() - t0
    return rep


def _oracle_checks(rep, spec, green, rng, n_states, n_moves, seed):
    oracle = DenseOracle(spec)
    worst = 0.0
    for _ in range(n_states):
        st = random_state(spec, 1.0, int(rng.integers(1, 40)), rng)
        if st.is_empty():
            continue
        e_fft = solve_fields(st, green).energy
        e_dense = oracle.energy(st)
        worst = max(worst, abs(e_fft - e_dense) / e_dense)
    rep.add("spectral vs dense energy", worst, 1e-10, f"{n_states} random closed-loop states")

    st = random_state(spec, 1.0, 30, rng)
    sol = solve_fields(st, green)
    worst = 0.0
    for _ in range(n_moves):
        p = Plaquette.from_index(int(rng.integers(spec.n_plaquettes)), int(rng.choice([-1, 1])), spec.N)
        dE = energy_delta(st, sol, p, green)
        apply_plaquette(st, p)
        new = solve_fields(st, green)
        full = new.energy - sol.energy
        worst = max(worst, abs(dE - full) / max(abs(full), green.plaquette_self_energy(1.0)))
        sol = new
    rep.add("incremental vs full energy delta", worst, 1e-10, f"{n_moves} moves")


def _chain_checks(rep, spec, green, rng, n_states, n_moves, seed):
    cfg = SamplerConfig(100.0, seed=seed)
    d = initialize(cfg, spec, 2.0, green)
    d = initialize(SamplerConfig(100.0, z2_bound=d.z2 * 1.02, seed=seed), spec, 2.0, green)
    e_min, e_max, s2_top, drift = np.inf, -np.inf, 0, 0.0
    for _ in range(10):
        stats, _ = d.sweep(spec.n_plaquettes, refresh_accepts=10 ** 9)
        e_min = min(e_min, stats[kernels.ST_ED_MIN])
        e_max = max(e_max, stats[kernels.ST_ED_MAX])
        s2_top = max(s2_top, stats[kernels.ST_S2_MAX])
        fresh = solve_fields(d.state, green).energy
        drift = max(drift, abs(fresh + d.e_demon - d.e_total) / d.e_total)
    rep.add("energy + demon conservation", drift, 1e-8)
    rep.add("demon within [0, cap]", max(0.0, -e_min, e_max - d.demon_cap), 0.0)
    rep.add("Z2 below bound", max(0.0, s2_top - d.s2_max), 0.0)
    rep.add("div xi = 0 at chain end",
            float(np.max(np.abs(div_backward(d.state.m.astype(float), spec)))), 0.0)
