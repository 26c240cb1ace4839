"""Stage one: RIS-UE association as a many-to-many matching game."""

from __future__ import annotations

import csv
import io
from collections import deque
from dataclasses import dataclass, field
from typing import FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from .phase_opt import mm_iterate, pair_quadratic, random_phases

__all__ = [
    "PreferenceTable", "Association", "compute_utilities", "preference_table",
    "match", "is_blocking_pair", "blocking_pairs", "MatchingInvariantError",
]


class MatchingInvariantError(AssertionError):
    pass


def _sorted_desc(values: np.ndarray) -> List[int]:
    # descending by value, ties by ascending index
    return sorted(range(len(values)), key=lambda i: (-values[i], i))


@dataclass
class PreferenceTable:
    """Utilities ``U[k, m]`` with both sides' preference lists.

    ``ue_pref[k]`` lists RIS indices best-first, ``ris_pref[m]`` lists UE
    indices best-first, and ``threshold[k] = delta * ||H_d[k]||_F^2``.
    """

    utility: np.ndarray
    threshold: np.ndarray
    ue_pref: List[List[int]]
    ris_pref: List[List[int]]
    mm_iterations: Optional[np.ndarray] = None
    mm_traces: Optional[List[List[List[float]]]] = None

    def __post_init__(self):
        K, M = self.utility.shape
        self.ue_rank = np.empty((K, M), dtype=int)
        self.ris_rank = np.empty((M, K), dtype=int)
        for k, pref in enumerate(self.ue_pref):
            self.ue_rank[k, pref] = np.arange(M)
        for m, pref in enumerate(self.ris_pref):
            self.ris_rank[m, pref] = np.arange(K)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.utility.shape

    def ue_prefers(self, k: int, m: int, m2: int) -> bool:
        """``m >_k m2``."""
        return self.ue_rank[k, m] < self.ue_rank[k, m2]

    def ris_prefers(self, m: int, k: int, k2: int) -> bool:
        """``k >_m k2``."""
        return self.ris_rank[m, k] < self.ris_rank[m, k2]


def preference_table(utility, threshold, **extra) -> PreferenceTable:
    """Build a `PreferenceTable` from a ``(K, M)`` utility matrix."""
    U = np.asarray(utility, dtype=float)
    K, M = U.shape
    return PreferenceTable(
        U, np.broadcast_to(np.asarray(threshold, dtype=float), (K,)).copy(),
        [_sorted_desc(U[k]) for k in range(K)],
        [_sorted_desc(U[:, m]) for m in range(M)], **extra)


def compute_utilities(channels, config, rng: Optional[np.random.Generator] = None) -> PreferenceTable:
    """Per-pair MM phases and the resulting RIS-part utilities.

    For every (k, m) the MM optimizer maximizes ``||H_d[k] + H_r[m,k] Phi G_r[m]||^2``
    and the utility is the reflected-part strength ``||H_r[m,k] Phi* G_r[m]||^2``.
    """
    M, N = channels.ap_ris.shape[:2]
    K = channels.direct.shape[0]
    U = np.zeros((K, M))
    iters = np.zeros((K, M), dtype=int)
    traces: List[List[List[float]]] = [[[] for _ in range(M)] for _ in range(K)]
    init = np.ones(N, dtype=complex)
    for m in range(M):
        G = channels.ap_ris[m]
        gg = G.conj() @ G.T
        for k in range(K):
            A, b, const = pair_quadratic(channels.ris_ue[m, k], G, channels.direct[k], gg)
            if config.mm_init == "random":
                init = random_phases(1, N, rng)[0]
            res = mm_iterate(A, b, init, config.mm_tol, config.mm_max_iter, const)
            U[k, m] = max(float(np.vdot(res.phi, A @ res.phi).real), 0.0)
            iters[k, m] = res.iterations
            traces[k][m] = res.trace
    threshold = config.rejection_ratio * np.sum(np.abs(channels.direct) ** 2, axis=(1, 2))
    return preference_table(U, threshold, mm_iterations=iters, mm_traces=traces)


@dataclass
class Association:
    """Binary matching ``c[m, k]`` plus the rejection lists of each UE."""

    c: np.ndarray
    rejected: List[FrozenSet[int]] = field(default_factory=list)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=bool)
        if not self.rejected:
            self.rejected = [frozenset() for _ in range(self.c.shape[1])]

    @classmethod
    def empty(cls, num_ris: int, num_ues: int) -> "Association":
        return cls(np.zeros((num_ris, num_ues), dtype=bool))

    @classmethod
    def full(cls, num_ris: int, num_ues: int) -> "Association":
        return cls(np.ones((num_ris, num_ues), dtype=bool))

    @property
    def gamma_m(self) -> List[FrozenSet[int]]:
        return [frozenset(np.flatnonzero(row).tolist()) for row in self.c]

    @property
    def gamma_k(self) -> List[FrozenSet[int]]:
        return [frozenset(np.flatnonzero(col).tolist()) for col in self.c.T]

    @property
    def num_pairs(self) -> int:
        return int(self.c.sum())

    def check(self, quota_ue_per_ris: int, quota_ris_per_ue: int) -> None:
        loads_m = self.c.sum(axis=1)
        loads_k = self.c.sum(axis=0)
        if np.any(loads_m > quota_ue_per_ris):
            raise MatchingInvariantError(f"RIS quota exceeded: {loads_m.tolist()}")
        if np.any(loads_k > quota_ris_per_ue):
            raise MatchingInvariantError(f"UE quota exceeded: {loads_k.tolist()}")

    def to_csv(self) -> str:
        """K x M 0/1 matrix, one row per UE."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"ris_{m}" for m in range(self.c.shape[0])])
        for row in self.c.T.astype(int):
            writer.writerow(row.tolist())
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Association":
        rows = list(csv.reader(io.StringIO(text)))
        return cls(np.array([[int(v) for v in r] for r in rows[1:] if r], dtype=bool).T)


def is_blocking_pair(assoc, prefs: PreferenceTable, m: int, k: int) -> bool:
    """Whether unmatched ``(m, k)`` would both rather swap in each other.

    Requires partners ``m2`` of k and ``k2`` of m with ``m >_k m2`` and
    ``k >_m k2``; free quota slots alone never make a pair blocking.
    """
    c = assoc.c if isinstance(assoc, Association) else np.asarray(assoc, dtype=bool)
    if c[m, k]:
        return False
    partners_k = np.flatnonzero(c[:, k])
    partners_m = np.flatnonzero(c[m])
    return (any(prefs.ue_prefers(k, m, m2) for m2 in partners_k)
            and any(prefs.ris_prefers(m, k, k2) for k2 in partners_m))


def blocking_pairs(assoc, prefs: PreferenceTable, skip_rejected: bool = True) -> List[Tuple[int, int]]:
    K, M = prefs.shape
    out = []
    for m in range(M):
        for k in range(K):
            if skip_rejected and isinstance(assoc, Association) and m in assoc.rejected[k]:
                continue
            if is_blocking_pair(assoc, prefs, m, k):
                out.append((m, k))
    return out


class _State:
    def __init__(self, prefs: PreferenceTable, quota_m: int, quota_k: int, debug: bool):
        K, M = prefs.shape
        self.prefs = prefs
        self.quota_m = quota_m
        self.quota_k = quota_k
        self.debug = debug
        self.gm = [set() for _ in range(M)]
        self.gk = [set() for _ in range(K)]

    def link(self, m, k):
        self.gm[m].add(k)
        self.gk[k].add(m)

    def unlink(self, m, k):
        self.gm[m].discard(k)
        self.gk[k].discard(m)

    def worst_ris(self, k):
        return max(self.gk[k], key=lambda m: self.prefs.ue_rank[k, m])

    def worst_ue(self, m):
        return max(self.gm[m], key=lambda k: self.prefs.ris_rank[m, k])

    def verify(self):
        for m, ues in enumerate(self.gm):
            if len(ues) > self.quota_m:
                raise MatchingInvariantError(f"RIS {m} over quota: {sorted(ues)}")
            for k in ues:
                if m not in self.gk[k]:
                    raise MatchingInvariantError(f"asymmetric pair ({m}, {k})")
        for k, ris in enumerate(self.gk):
            if len(ris) > self.quota_k:
                raise MatchingInvariantError(f"UE {k} over quota: {sorted(ris)}")
            for m in ris:
                if k not in self.gm[m]:
                    raise MatchingInvariantError(f"asymmetric pair ({m}, {k})")

    def matrix(self) -> np.ndarray:
        c = np.zeros((len(self.gm), len(self.gk)), dtype=bool)
        for m, ues in enumerate(self.gm):
            c[m, list(ues)] = True
        return c


def match(prefs: PreferenceTable, config=None, *, quota_ue_per_ris: Optional[int] = None,
          quota_ris_per_ue: Optional[int] = None, printed_threshold: bool = False,
          stabilize: bool = True, debug: bool = False) -> Association:
    """Many-to-many RIS-UE matching with swap operations.

    UEs propose in preference order. A RIS whose utility falls below the UE's
    threshold goes to that UE's rejection list (``printed_threshold=True``
    flips the test, for comparison only). Full quotas are resolved by
    displacing the worst current partner, and by double swaps when
    ``(m, k)`` blocks. After the proposal phase a repair loop removes any
    remaining blocking pair and fills slots left free on both sides by
    admissible pairs, until neither applies (at most ``K*M`` rounds).
    """
    K, M = prefs.shape
    qm = quota_ue_per_ris if quota_ue_per_ris is not None else config.quota_ue_per_ris
    qk = quota_ris_per_ue if quota_ris_per_ue is not None else config.quota_ris_per_ue
    U, thr = prefs.utility, prefs.threshold
    st = _State(prefs, qm, qk, debug)
    rejected = [set() for _ in range(K)]
    lists = [deque(p) for p in prefs.ue_pref]
    proposals = 0

    while any(lists):
        for k in range(K):
            if not lists[k]:
                continue
            m = lists[k].popleft()
            proposals += 1
            below = U[k, m] < thr[k]
            if below != printed_threshold:
                rejected[k].add(m)
                continue
            if len(st.gm[m]) < qm:
                if len(st.gk[k]) < qk:
                    st.link(m, k)
                else:
                    m2 = st.worst_ris(k)
                    if prefs.ue_prefers(k, m, m2):
                        st.unlink(m2, k)
                        st.link(m, k)
            else:
                k2 = st.worst_ue(m)
                if len(st.gk[k]) < qk and prefs.ris_prefers(m, k, k2):
                    st.unlink(m, k2)
                    st.link(m, k)
                elif st.gk[k]:
                    m2 = st.worst_ris(k)
                    if prefs.ue_prefers(k, m, m2) and prefs.ris_prefers(m, k, k2):
                        st.unlink(m, k2)
                        st.unlink(m2, k)
                        st.link(m, k)
            if debug:
                st.verify()
    assert proposals <= K * M

    if stabilize:
        for _ in range(K * M):
            changed = False
            for m in range(M):
                for k in range(K):
                    if m in rejected[k] or k in st.gm[m] or not st.gk[k] or not st.gm[m]:
                        continue
                    m2 = st.worst_ris(k)
                    k2 = st.worst_ue(m)
                    if prefs.ue_prefers(k, m, m2) and prefs.ris_prefers(m, k, k2):
                        st.unlink(m, k2)
                        st.unlink(m2, k)
                        st.link(m, k)
                        changed = True
                        if debug:
                            st.verify()
            free = [(m, k) for m in range(M) for k in range(K)
                    if m not in rejected[k] and k not in st.gm[m]
                    and len(st.gm[m]) < qm and len(st.gk[k]) < qk]
            if free:
                m, k = max(free, key=lambda p: (U[p[1], p[0]], -p[0], -p[1]))
                st.link(m, k)
                changed = True
                if debug:
                    st.verify()
            if not changed:
                break

    st.verify()
    return Association(st.matrix(), [frozenset(r) for r in rejected])
