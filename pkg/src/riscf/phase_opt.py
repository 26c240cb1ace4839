"""Unit-modulus RIS phase design by majorization-minimization (MM).

Both problems solved here are quadratics over unit-modulus vectors,

    g(phi) = phi^H A phi + 2 Re(phi^H b),     A = C^H C (PSD),

and every MM step maximizes the linear minorizer of ``phi^H A phi`` at the
current point, which has the closed form ``phi <- exp(j arg(A phi + b))``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "PhaseConfig", "CascadeOperator", "MMResult", "build_cascade", "mm_iterate",
    "mm_phase_pair", "mm_phase_aggregate", "pair_quadratic", "aggregate_terms",
    "quantize_phases", "random_phases",
    "write_traces_csv", "UNIT_MODULUS_TOL", "ARG_FLOOR",
]

UNIT_MODULUS_TOL = 1e-12
ARG_FLOOR = 1e-14


@dataclass
class PhaseConfig:
    """Per-RIS phase vectors, ``phi[m, n] = exp(j theta[m, n])``.

    ``traces`` and ``iterations`` are filled in by the aggregate optimizer
    (one entry per RIS, empty trace for RISs that were left untouched).
    """

    phi: np.ndarray
    traces: List[List[float]] = field(default_factory=list)
    iterations: List[int] = field(default_factory=list)

    @classmethod
    def identity(cls, num_ris: int, num_elements: int) -> "PhaseConfig":
        return cls(np.ones((num_ris, num_elements), dtype=complex))

    @property
    def theta(self) -> np.ndarray:
        return np.mod(np.angle(self.phi), 2 * np.pi)

    def diag(self, m: int) -> np.ndarray:
        return np.diag(self.phi[m])


def random_phases(num_ris: int, num_elements: int, rng: np.random.Generator) -> PhaseConfig:
    return PhaseConfig(np.exp(1j * rng.uniform(0, 2 * np.pi, size=(num_ris, num_elements))))


@dataclass(frozen=True)
class CascadeOperator:
    """Vectorized cascade ``vec(H_d + H_r diag(phi) G_r) = h_d + C phi``.

    Column i of C is ``kron(G_r[i, :], H_r[:, i])``: the columns of the full
    Kronecker product ``G_r^T (x) H_r`` that survive a diagonal phase matrix.
    """

    C: np.ndarray    # (N_r * B*N_t, N)
    h_d: np.ndarray  # (N_r * B*N_t,)

    @property
    def gram(self) -> np.ndarray:
        return self.C.conj().T @ self.C

    @property
    def linear(self) -> np.ndarray:
        return self.C.conj().T @ self.h_d

    def objective(self, phi: np.ndarray) -> float:
        """g(phi); the channel strength is ``g(phi) + ||h_d||^2``."""
        v = self.C @ phi
        return float(np.vdot(v, v).real + 2.0 * np.vdot(phi, self.C.conj().T @ self.h_d).real)


def build_cascade(H_r: np.ndarray, G_r: np.ndarray, H_d: np.ndarray) -> CascadeOperator:
    n_r, n = H_r.shape
    if G_r.shape[0] != n or H_d.shape != (n_r, G_r.shape[1]):
        raise ValueError(
            f"dimension mismatch: H_r {H_r.shape}, G_r {G_r.shape}, H_d {H_d.shape}")
    # (N, B*N_t, N_r) flattened row-major == column-major vec of each N_r x B*N_t term
    C = (G_r[:, :, None] * H_r.T[:, None, :]).reshape(n, -1).T
    return CascadeOperator(C, H_d.reshape(-1, order="F"))


@dataclass
class MMResult:
    phi: np.ndarray
    trace: List[float]
    iterations: int
    converged: bool


def _quad(A, b, phi) -> float:
    return float(np.vdot(phi, A @ phi).real + 2.0 * np.vdot(phi, b).real)


def mm_iterate(A: np.ndarray, b: np.ndarray, init: np.ndarray, tol: float,
               max_iter: int, offset: float = 0.0) -> MMResult:
    """Run MM on ``g(phi) = phi^H A phi + 2 Re(phi^H b)`` from `init`.

    Stops once ``|g_t - g_(t-1)| <= tol * |g_t + offset|``; `offset` is the
    constant part of the objective (``||h_d||^2``), so the test is relative to
    the full channel strength and independent of the channel scale.
    """
    phi = np.asarray(init, dtype=complex).copy()
    if np.any(np.abs(np.abs(phi) - 1.0) > 1e-9):
        raise ValueError("initial phases must be unit modulus")
    phi /= np.abs(phi)
    g = _quad(A, b, phi)
    trace = [g]
    converged = False
    it = 0
    while it < max_iter:
        z = A @ phi + b
        mag = np.abs(z)
        # arg(0) is undefined: entries negligible against the largest keep their phase
        keep = mag <= ARG_FLOOR * mag.max()
        new = np.where(keep, phi, z / np.where(keep, 1.0, mag))
        phi = new
        it += 1
        g_new = _quad(A, b, phi)
        trace.append(g_new)
        if abs(g_new - g) <= tol * abs(g_new + offset):
            converged = True
            break
        g = g_new
    return MMResult(phi, trace, it, converged)


def mm_phase_pair(op: CascadeOperator, init: Optional[np.ndarray] = None,
                  tol: float = 1e-3, max_iter: int = 50) -> MMResult:
    """Maximize ``||H_d + H_r diag(phi) G_r||_F^2`` for one RIS-UE pair."""
    if init is None:
        init = np.ones(op.C.shape[1], dtype=complex)
    offset = float(np.vdot(op.h_d, op.h_d).real)
    return mm_iterate(op.gram, op.linear, init, tol, max_iter, offset)


def pair_quadratic(H_r: np.ndarray, G_r: np.ndarray, H_d: np.ndarray,
                   gg: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray, float]:
    """``(C^H C, C^H h_d, ||h_d||^2)`` without forming C.

    ``(C^H C)[i, l] = (G_r^* G_r^T)[i, l] * (H_r^H H_r)[i, l]``; pass the
    RIS-side factor `gg` to share it between UEs of the same RIS.
    """
    if gg is None:
        gg = G_r.conj() @ G_r.T
    A = gg * (H_r.conj().T @ H_r)
    b = np.sum(H_r.conj() * (H_d @ G_r.conj().T), axis=0)
    return A, b, float(np.vdot(H_d, H_d).real)


def aggregate_terms(channels, assoc, m: int, weights=None) -> Tuple[np.ndarray, np.ndarray, float]:
    """Summed quadratic ``(A_m, b_m, const)`` of RIS `m` over its associated UEs."""
    n = channels.ap_ris.shape[1]
    A = np.zeros((n, n), dtype=complex)
    b = np.zeros(n, dtype=complex)
    const = 0.0
    c = np.asarray(getattr(assoc, "c", assoc))
    G = channels.ap_ris[m]
    gg = G.conj() @ G.T
    for k in np.flatnonzero(c[m]):
        A_k, b_k, c_k = pair_quadratic(channels.ris_ue[m, k], G, channels.direct[k], gg)
        w = 1.0 if weights is None else float(weights[k])
        A += w * A_k
        b += w * b_k
        const += w * c_k
    return A, b, const


def mm_phase_aggregate(channels, assoc, config, init: Optional[PhaseConfig] = None,
                       rng: Optional[np.random.Generator] = None) -> PhaseConfig:
    """Per-RIS MM on the association-aggregated quadratic.

    RIS m maximizes ``sum_{k in gamma(m)} ||H_d[k] + H_r[m,k] Phi_m G_r[m]||^2``;
    RISs with no associated UE keep their initial phases.
    """
    M, N = channels.ap_ris.shape[:2]
    if init is None:
        if config.mm_init == "random":
            if rng is None:
                raise ValueError("random MM initialisation needs an rng")
            init = random_phases(M, N, rng)
        else:
            init = PhaseConfig.identity(M, N)
    weights = config.weight_array if config.weighted_aggregate else None
    phi = init.phi.copy()
    traces, iterations = [], []
    c = np.asarray(getattr(assoc, "c", assoc))
    for m in range(M):
        if not c[m].any():
            traces.append([])
            iterations.append(0)
            continue
        A, b, const = aggregate_terms(channels, c, m, weights)
        res = mm_iterate(A, b, phi[m], config.mm_tol, config.mm_max_iter, const)
        phi[m] = res.phi
        traces.append(res.trace)
        iterations.append(res.iterations)
    return PhaseConfig(phi, traces, iterations)


def quantize_phases(phases: PhaseConfig, bits: int) -> PhaseConfig:
    """Project every phase onto the nearest point of the ``2**bits``-level grid."""
    if bits < 1:
        raise ValueError("bits must be >= 1")
    levels = 2 ** bits
    step = 2 * np.pi / levels
    idx = np.mod(np.rint(phases.theta / step), levels)
    return PhaseConfig(np.exp(1j * idx * step))


def write_traces_csv(path, traces: Sequence[Sequence[float]], labels: Optional[Sequence] = None) -> None:
    """Objective traces as ``(trace, iteration, objective)`` rows."""
    labels = list(labels) if labels is not None else list(range(len(traces)))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trace", "iteration", "objective"])
        for label, trace in zip(labels, traces):
            for i, value in enumerate(trace):
                writer.writerow([label, i, repr(float(value))])
