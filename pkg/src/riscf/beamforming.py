"""Stage two AP precoding: joint block diagonalization under per-AP power limits.

Zero-forcing confines UE k's precoder to the null space ``E_tilde[k]`` of the
other UEs' effective channels. For fixed per-AP duals ``mu`` the problem
splits into K water-filling subproblems; the duals are set AP by AP with a
bisection on the AP's power usage (Gauss-Seidel over APs).

Channels are noise-normalized (divided by ``sqrt(noise)``) before the reduced
SVD, so water levels ``lambda = max(0, w - 1/s**2)`` apply to dimensionless
singular values. Powers are in mW and duals in 1/mW.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "NullSpaceBasis", "WaterfillResult", "PrecoderSet", "null_space_basis",
    "null_space_bases", "inv_sqrt_psd", "waterfill_subproblem", "recover_precoder",
    "power_usage", "joint_bd", "ap_selector", "write_diagnostics_csv",
    "MU_FLOOR", "EIG_FLOOR",
]

MU_FLOOR = 1e-10
EIG_FLOOR = 1e-12
RANK_RTOL = 1e-10


@dataclass
class NullSpaceBasis:
    E_tilde: np.ndarray
    rank_deficient: bool = False


def null_space_basis(effective_channels: Sequence[np.ndarray], ue: int) -> NullSpaceBasis:
    """Orthonormal basis of the null space of the other UEs' stacked channels.

    Returns the trailing ``B*N_t - (K-1)*N_r`` right singular vectors of
    ``D_k`` from a full SVD. If ``D_k`` is rank deficient its null space is
    larger; the same number of vectors is returned and the flag is set.
    """
    H = [np.asarray(h) for h in effective_channels]
    L2 = H[0].shape[1]
    others = [h for i, h in enumerate(H) if i != ue]
    if not others:
        return NullSpaceBasis(np.eye(L2, dtype=complex))
    D = np.concatenate(others, axis=0)
    L1 = D.shape[0]
    if L1 >= L2:
        raise ValueError(f"no null space: (K-1)*N_r = {L1} >= B*N_t = {L2}")
    _, s, Vh = np.linalg.svd(D, full_matrices=True)
    rank = int(np.sum(s > RANK_RTOL * max(s[0], np.finfo(float).tiny))) if s.size else 0
    deficient = rank < L1
    if deficient:
        warnings.warn(f"D_{ue} has rank {rank} < {L1}; null space is larger than L2-L1",
                      RuntimeWarning, stacklevel=2)
    return NullSpaceBasis(Vh[L1:].conj().T, deficient)


def null_space_bases(effective_channels: np.ndarray) -> List[NullSpaceBasis]:
    return [null_space_basis(effective_channels, k) for k in range(len(effective_channels))]


def inv_sqrt_psd(Q: np.ndarray) -> np.ndarray:
    """``Q^{-1/2}`` of a (stack of) Hermitian PD matrices, eigenvalues floored."""
    w, V = np.linalg.eigh(Q)
    if np.any(w < EIG_FLOOR * 1e-3):
        raise np.linalg.LinAlgError(
            f"E^H T_mu E is singular beyond the regularization floor (min eig {w.min():.3e})")
    w = np.maximum(w, EIG_FLOOR)
    return (V * (1.0 / np.sqrt(w))[..., None, :]) @ np.swapaxes(V.conj(), -1, -2)


def ap_selector(num_aps: int, ap_antennas: int) -> np.ndarray:
    """``(B, B*N_t)`` 0/1 rows; row b is the diagonal of T_b."""
    return np.kron(np.eye(num_aps), np.ones((1, ap_antennas)))


@dataclass
class WaterfillResult:
    S: np.ndarray          # (n, n) covariance in null-space coordinates
    lam: np.ndarray        # water levels, descending
    sigma: np.ndarray      # noise-normalized singular values, descending
    E_hat: np.ndarray      # (n, r) right singular vectors
    q_isqrt: np.ndarray    # (E^H T_mu E)^{-1/2}


def _water_levels(sigma: np.ndarray, weight, streams: int) -> np.ndarray:
    with np.errstate(divide="ignore"):
        inv = np.where(sigma > 0, 1.0 / np.maximum(sigma, 1e-300) ** 2, np.inf)
    lam = np.maximum(0.0, np.asarray(weight)[..., None] - inv)
    lam[..., streams:] = 0.0
    return lam


def waterfill_subproblem(E_tilde: np.ndarray, H_bar: np.ndarray, t_mu: np.ndarray,
                         weight: float, noise: float, streams: Optional[int] = None) -> WaterfillResult:
    """Optimal ``S_k`` of ``w log|I + H E S E^H H^H / noise| - Tr(T_mu E S E^H)``.

    `t_mu` is the diagonal of T_mu (length B*N_t); entries are floored at
    ``MU_FLOOR`` inside the inversion only.
    """
    t = np.maximum(np.asarray(t_mu, dtype=float), MU_FLOOR)
    Q = (E_tilde.conj().T * t) @ E_tilde
    q_isqrt = inv_sqrt_psd(Q)
    A = (H_bar / np.sqrt(noise)) @ E_tilde @ q_isqrt
    _, sigma, Eh = np.linalg.svd(A, full_matrices=False)
    r = sigma.size
    lam = _water_levels(sigma, weight, r if streams is None else streams)
    E_hat = Eh.conj().T
    S = q_isqrt @ (E_hat * lam) @ E_hat.conj().T @ q_isqrt
    return WaterfillResult(S, lam, sigma, E_hat, q_isqrt)


def recover_precoder(E_tilde: np.ndarray, wf: WaterfillResult, streams: int) -> np.ndarray:
    """``F = E_tilde Q^{-1/2} E_hat Lambda^{1/2}`` padded/truncated to `streams` columns."""
    F = E_tilde @ wf.q_isqrt @ (wf.E_hat * np.sqrt(wf.lam))
    out = np.zeros((F.shape[0], streams), dtype=complex)
    n = min(streams, F.shape[1])
    out[:, :n] = F[:, :n]
    return out


@dataclass
class PrecoderSet:
    """Joint BD output plus convergence diagnostics."""

    W: np.ndarray                      # (K, L2, L2)
    F: np.ndarray                      # (K, L2, N_s)
    mu: np.ndarray                     # (B,)
    ap_power: np.ndarray               # (B,) mW after the final feasibility scaling
    water_levels: np.ndarray           # (K, N_r)
    converged: bool = True
    outer_iterations: int = 0
    rank_deficient: bool = False
    mu_trajectory: List[np.ndarray] = field(default_factory=list)
    power_trajectory: List[np.ndarray] = field(default_factory=list)
    rate_trajectory: List[float] = field(default_factory=list)


class _BatchedBD:
    """Water-filling for all UEs at once, at any dual vector."""

    def __init__(self, effective_channels, config, bases=None):
        H = np.asarray(effective_channels)
        self.K, self.Nr, self.L2 = H.shape
        self.B, self.Nt = config.num_aps, config.ap_antennas
        if self.B * self.Nt != self.L2:
            raise ValueError(f"channels have {self.L2} tx antennas, config says {self.B}x{self.Nt}")
        self.weights = config.weight_array
        self.streams = config.streams
        bases = bases if bases is not None else null_space_bases(H)
        self.rank_deficient = any(b.rank_deficient for b in bases)
        self.E = np.stack([b.E_tilde for b in bases])                       # (K, L2, n)
        self.Hn = H / np.sqrt(config.noise_mw)
        self.HE = self.Hn @ self.E                                          # (K, Nr, n)
        Eb = self.E.reshape(self.K, self.B, self.Nt, -1)
        self.Z = np.einsum("kbai,kbaj->bkij", Eb.conj(), Eb)               # (B, K, n, n)
        self.sel = ap_selector(self.B, self.Nt)

    def solve(self, mu):
        t = np.maximum(np.asarray(mu, dtype=float), MU_FLOOR)
        Q = np.einsum("b,bkij->kij", t, self.Z)
        q_isqrt = inv_sqrt_psd(Q)
        A = self.HE @ q_isqrt
        _, sigma, Eh = np.linalg.svd(A, full_matrices=False)
        lam = _water_levels(sigma, self.weights, self.streams)
        E_hat = np.swapaxes(Eh.conj(), -1, -2)
        F = self.E @ q_isqrt @ (E_hat * np.sqrt(lam)[:, None, :])           # (K, L2, r)
        return F, lam, sigma

    def power(self, mu):
        F, lam, sigma = self.solve(mu)
        return self.sel @ np.sum(np.abs(F) ** 2, axis=(0, 2))

    def rate(self, lam, sigma):
        return float(np.sum(self.weights[:, None] * np.log2(1.0 + lam * sigma ** 2)))


def power_usage(b: int, mu, bases, channels, config) -> float:
    """Total transmit power of AP `b` (mW) when all S_k are solved at duals `mu`."""
    if not 0 <= b < config.num_aps:
        raise IndexError(f"AP index {b} out of range")
    return float(_BatchedBD(channels, config, bases).power(mu)[b])


def _kkt_residual(p, mu, pmax):
    active = mu > 0
    res = np.where(active, np.abs(p - pmax), np.maximum(0.0, p - pmax)) / pmax
    return float(res.max())


def _bracket(above, guess):
    """``(lo, hi)`` with ``above(lo)`` true and ``above(hi)`` false.

    Starts at ``[0, 100]`` (doubling hi) unless a positive `guess` from the
    previous sweep is available, in which case a narrow bracket around it is
    widened geometrically. Valid because power usage decreases in mu_b.
    """
    if guess <= 0:
        lo, hi = 0.0, 1e2
    else:
        lo, hi = 0.8 * guess, 1.25 * guess
        while not above(lo):
            lo, hi = 0.5 * lo, lo
            if lo < 1e-300:
                lo = 0.0
                break
    while above(hi):
        lo, hi = hi, 2.0 * hi
        if hi > 1e300:
            raise FloatingPointError("power usage does not fall below P_max")
    return lo, hi


def joint_bd(effective_channels, config, bases=None) -> PrecoderSet:
    """Joint BD precoders for all UEs (Gauss-Seidel dual updates + bisection).

    After the outer loop a uniform scaling ``min(1, min_b P/p_b)`` makes every
    AP feasible; it only touches powers left off-target by the last sweep.
    """
    bd = _BatchedBD(effective_channels, config, bases)
    pmax = config.max_power_mw
    eps, zeta = config.bisection_tol, config.dual_tol
    mu = np.full(bd.B, float(config.mu_init))

    def power_at(b, value):
        trial = mu.copy()
        trial[b] = value
        return bd.power(trial)[b]

    F, lam, sigma = bd.solve(mu)
    p = bd.sel @ np.sum(np.abs(F) ** 2, axis=(0, 2))
    mu_traj, p_traj, r_traj = [mu.copy()], [p], [bd.rate(lam, sigma)]
    best = (np.inf, mu.copy())
    converged = False
    sweeps = 0
    for sweeps in range(1, config.bd_max_outer + 1):
        prev = mu.copy()
        for b in range(bd.B):
            if power_at(b, 0.0) <= pmax:
                mu[b] = 0.0
                continue
            lo, hi = _bracket(lambda v: power_at(b, v) >= pmax, mu[b])
            # bracketing root search (bisection-safeguarded), valid since f_b decreases
            mu[b] = brentq(lambda v: power_at(b, v) - pmax, lo, hi, xtol=1e-15 * hi,
                           rtol=1e-3 * eps, maxiter=config.bisection_max_iter)
        F, lam, sigma = bd.solve(mu)
        p = bd.sel @ np.sum(np.abs(F) ** 2, axis=(0, 2))
        mu_traj.append(mu.copy())
        p_traj.append(p)
        r_traj.append(bd.rate(lam, sigma))
        resid = _kkt_residual(p, mu, pmax)
        if resid < best[0]:
            best = (resid, mu.copy())
        scale = max(np.max(mu), np.max(prev), np.finfo(float).tiny)
        if resid <= zeta or np.max(np.abs(mu - prev)) <= zeta * 1e-2 * scale:
            converged = resid <= 10 * zeta
            break
    if not converged:
        mu = best[1]
        warnings.warn("joint BD did not converge; returning the best iterate", RuntimeWarning,
                      stacklevel=2)
    F, lam, sigma = bd.solve(mu)
    p = bd.sel @ np.sum(np.abs(F) ** 2, axis=(0, 2))
    scale = min(1.0, float(np.min(np.where(p > 0, pmax / np.maximum(p, 1e-300), np.inf))))
    F = F * np.sqrt(scale)
    p = p * scale
    r = F.shape[2]
    Fs = np.zeros((bd.K, bd.L2, config.streams), dtype=complex)
    n = min(r, config.streams)
    Fs[:, :, :n] = F[:, :, :n]
    W = Fs @ np.swapaxes(Fs.conj(), -1, -2)
    return PrecoderSet(W, Fs, mu, p, lam, converged, sweeps, bd.rank_deficient,
                       mu_traj, p_traj, r_traj)


def write_diagnostics_csv(path, precoders: PrecoderSet) -> None:
    """Per-sweep duals, per-AP power (dBm) and the ZF sum rate, then water levels."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "iteration", "index", "value"])
        for it, (mu, p, r) in enumerate(zip(precoders.mu_trajectory,
                                            precoders.power_trajectory,
                                            precoders.rate_trajectory)):
            for b, (m_b, p_b) in enumerate(zip(mu, p)):
                writer.writerow(["mu", it, b, repr(float(m_b))])
                writer.writerow(["power_dbm", it, b,
                                 repr(float(10 * np.log10(max(p_b, 1e-300))))])
            writer.writerow(["wsr", it, "", repr(r)])
        for k, levels in enumerate(precoders.water_levels):
            for i, lam in enumerate(levels):
                writer.writerow(["water_level", "", f"{k}:{i}", repr(float(lam))])
