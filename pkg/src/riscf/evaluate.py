"""Rates, the two-stage pipeline, baselines and Monte-Carlo aggregation.

Every drop draws its topology and channels, its CSI errors and each scheme's
own randomness from separate streams derived from ``(seed, drop)``, so all
schemes (and all sweep points) see the same channel realizations.
Designs use the estimated channels; rates are always scored on the true ones.
"""

from __future__ import annotations

import csv
import io
import os
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .association import Association, compute_utilities, match
from .beamforming import PrecoderSet, joint_bd
from .channel import ChannelSet, CsiErrorSpec, corrupt_csi, effective_channels, generate_channels
from .phase_opt import PhaseConfig, mm_phase_aggregate, quantize_phases, random_phases
from .scenario import SystemConfig, check_config, dump_config, generate_topology, with_overrides

__all__ = [
    "SCHEMES", "RunResult", "MonteCarloResult", "user_rate", "user_rates",
    "run_drop", "run_two_stage", "run_baseline", "monte_carlo", "sweep_config",
    "parse_grid", "empirical_cdf", "aggregate_csv", "cdf_csv", "provenance",
    "parse_scheme",
]

SCHEMES = ("proposed", "full_association", "discrete2", "discrete1", "random_phase",
           "without_ris", "direct_blocked")

# stream index of each scheme's private randomness (stable across scheme lists)
_SCHEME_STREAM = {"proposed": 0, "without_ris": 1, "random_phase": 2,
                  "full_association": 3, "direct_blocked": 4}


def parse_scheme(name: str) -> Tuple[str, int]:
    """``"discrete2"`` -> ``("discrete", 2)``; other names map to bits 0."""
    if name.startswith("discrete"):
        digits = name[len("discrete"):].lstrip("_")
        if digits.isdigit() and int(digits) >= 1:
            return "discrete", int(digits)
        raise ValueError(f"bad discrete scheme {name!r} (use discrete<bits>)")
    if name not in _SCHEME_STREAM:
        raise ValueError(f"unknown scheme {name!r}; known: {', '.join(SCHEMES)}")
    return name, 0


# ---------------------------------------------------------------------------
# rates
# ---------------------------------------------------------------------------

def user_rate(ue: int, effective_channels: np.ndarray, precoders, noise: float) -> float:
    """``log2 |I + H_k F_k F_k^H H_k^H (J_k + noise I)^{-1}|`` with exact interference J_k."""
    return float(user_rates(effective_channels, precoders, noise)[ue])


def user_rates(effective_channels: np.ndarray, precoders, noise: float) -> np.ndarray:
    F = precoders.F if isinstance(precoders, PrecoderSet) else np.asarray(precoders)
    H = np.asarray(effective_channels) / np.sqrt(noise)
    # R[k, i] = H_k F_i, the signal of UE i as seen at UE k
    R = np.einsum("krt,its->kirs", H, F)
    cov = R @ np.swapaxes(R.conj(), -1, -2)             # (K, K, Nr, Nr)
    K, Nr = H.shape[0], H.shape[1]
    total = np.eye(Nr) + cov.sum(axis=1)
    own = cov[np.arange(K), np.arange(K)]
    _, logdet_all = np.linalg.slogdet(total)
    _, logdet_int = np.linalg.slogdet(total - own)
    return np.maximum((logdet_all - logdet_int) / np.log(2.0), 0.0)


# ---------------------------------------------------------------------------
# per-drop pipeline
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    scheme: str
    seed: int
    drop: int
    wsr: float
    per_ue_rates: np.ndarray
    association: np.ndarray            # (M, K) bool
    csi_channels_acquired: int
    mm_iterations: int                 # max over all per-pair and aggregate MM runs
    bd_outer_iterations: int
    bd_converged: bool = True
    mm_pair_iterations: Optional[np.ndarray] = None
    mm_aggregate_iterations: List[int] = field(default_factory=list)
    ap_power_mw: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme, "seed": self.seed, "drop": self.drop,
            "wsr": self.wsr, "per_ue_rates": [float(r) for r in self.per_ue_rates],
            "association": self.association.astype(int).tolist(),
            "csi_channels_acquired": self.csi_channels_acquired,
            "mm_iterations": self.mm_iterations,
            "bd_outer_iterations": self.bd_outer_iterations,
            "bd_converged": self.bd_converged,
            "ap_power_dbm": ([float(10 * np.log10(max(p, 1e-300))) for p in self.ap_power_mw]
                             if self.ap_power_mw is not None else None),
        }


class _Drop:
    """Lazily shared intermediates of one drop."""

    def __init__(self, config: SystemConfig, seed: int, drop: int, csi: CsiErrorSpec):
        self.config = config
        self.seed = seed
        self.drop = drop
        self.csi = csi
        self.root = np.random.SeedSequence([seed, drop])
        chan_ss, csi_ss, self.scheme_ss = self.root.spawn(3)
        rng = np.random.default_rng(chan_ss)
        self.topology = generate_topology(config, rng)
        self.true = generate_channels(self.topology, config, rng)
        if csi.is_perfect:
            self.design = self.true
        else:
            self.design = corrupt_csi(self.true, csi, np.random.default_rng(csi_ss))
        self._cache: Dict[str, object] = {}

    def scheme_rng(self, name: str) -> np.random.Generator:
        ss = np.random.SeedSequence(self.scheme_ss.entropy,
                                    spawn_key=self.scheme_ss.spawn_key + (_SCHEME_STREAM[name],))
        return np.random.default_rng(ss)

    def stage_one(self, blocked: bool = False):
        """(prefs, association, phases) of the matching-based design."""
        key = "blocked" if blocked else "normal"
        if key not in self._cache:
            design = self.design.without_direct() if blocked else self.design
            rng = self.scheme_rng("direct_blocked" if blocked else "proposed")
            prefs = compute_utilities(design, self.config, rng)
            assoc = match(prefs, self.config)
            phases = mm_phase_aggregate(design, assoc, self.config, rng=rng)
            self._cache[key] = (prefs, assoc, phases)
        return self._cache[key]

    def score(self, scheme, assoc, phases, blocked=False, prefs=None) -> RunResult:
        cfg = self.config
        design = self.design.without_direct() if blocked else self.design
        true = self.true.without_direct() if blocked else self.true
        H_design = effective_channels(design, assoc, phases)
        precoders = joint_bd(H_design, cfg)
        H_true = effective_channels(true, assoc, phases)
        rates = user_rates(H_true, precoders, cfg.noise_mw)
        pair_iters = prefs.mm_iterations if prefs is not None else None
        agg_iters = list(getattr(phases, "iterations", []) or [])
        mm_max = max([0] + agg_iters + ([int(pair_iters.max())] if pair_iters is not None else []))
        return RunResult(
            scheme, self.seed, self.drop, float(np.dot(cfg.weight_array, rates)), rates,
            np.asarray(assoc.c, dtype=bool), int(assoc.num_pairs), int(mm_max),
            precoders.outer_iterations, precoders.converged, pair_iters, agg_iters,
            precoders.ap_power)

    def run(self, scheme: str) -> RunResult:
        cfg = self.config
        M, K, N = cfg.num_ris, cfg.num_ues, cfg.ris_elements
        kind, bits = parse_scheme(scheme)
        if kind == "proposed":
            prefs, assoc, phases = self.stage_one()
            return self.score(scheme, assoc, phases, prefs=prefs)
        if kind == "discrete":
            prefs, assoc, phases = self.stage_one()
            return self.score(scheme, assoc, quantize_phases(phases, bits), prefs=prefs)
        if kind == "random_phase":
            prefs, assoc, _ = self.stage_one()
            return self.score(scheme, assoc, random_phases(M, N, self.scheme_rng(kind)),
                              prefs=prefs)
        if kind == "without_ris":
            return self.score(scheme, Association.empty(M, K), PhaseConfig.identity(M, N))
        if kind == "full_association":
            assoc = Association.full(M, K)
            phases = mm_phase_aggregate(self.design, assoc, cfg, rng=self.scheme_rng(kind))
            return self.score(scheme, assoc, phases)
        prefs, assoc, phases = self.stage_one(blocked=True)
        return self.score(scheme, assoc, phases, blocked=True, prefs=prefs)


def run_drop(config: SystemConfig, seed: int, drop: int, schemes: Sequence[str],
             csi: Optional[CsiErrorSpec] = None) -> List[RunResult]:
    """All `schemes` on one drop, sharing channels and the stage-one design."""
    for s in schemes:
        parse_scheme(s)
    ctx = _Drop(config, seed, drop, csi or CsiErrorSpec())
    return [ctx.run(s) for s in schemes]


def run_two_stage(config: SystemConfig, seed: int, csi: Optional[CsiErrorSpec] = None,
                  drop: int = 0) -> RunResult:
    """Proposed design: matching, aggregated MM phases, joint BD; scored on true channels."""
    return run_drop(check_config(config), seed, drop, ["proposed"], csi)[0]


def run_baseline(scheme: str, config: SystemConfig, seed: int,
                 csi: Optional[CsiErrorSpec] = None, drop: int = 0) -> RunResult:
    return run_drop(check_config(config), seed, drop, [scheme], csi)[0]


# ---------------------------------------------------------------------------
# Monte-Carlo and sweeps
# ---------------------------------------------------------------------------

def parse_grid(text: str) -> List[float]:
    """``"start:step:stop"`` (inclusive) or a comma-separated list."""
    if ":" in text:
        parts = [float(v) for v in text.split(":")]
        if len(parts) != 3:
            raise ValueError(f"grid must be start:step:stop (got {text!r})")
        start, step, stop = parts
        if step <= 0 or stop < start:
            raise ValueError(f"empty or invalid grid {text!r}")
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [float(v) for v in np.round(start + step * np.arange(count), 12)]
    return [float(v) for v in text.split(",") if v.strip()]


def sweep_config(config: SystemConfig, csi: CsiErrorSpec, axis: Optional[str],
                 value: float) -> Tuple[SystemConfig, CsiErrorSpec]:
    """Apply one sweep value; power in dBm, lengths in meters."""
    if axis is None:
        return config, csi
    if axis == "csi_delta_r":
        return config, CsiErrorSpec(value, csi.delta_d, csi.los_only)
    if axis == "csi_delta_d":
        return config, CsiErrorSpec(csi.delta_r, value, csi.los_only)
    if axis.startswith("weight_"):
        k = int(axis[len("weight_"):])
        w = list(config.weights)
        if not 0 <= k < len(w):
            raise ValueError(f"{axis}: UE index out of range")
        w[k] = value
        return with_overrides(config, {"weights": tuple(w)}), csi
    aliases = {"power_dbm": "max_power_dbm", "ris_diameter": "diameter_ris",
               "ris_elements": "ris_elements"}
    if axis == "ap_antennas_total":
        per_ap = value / config.num_aps
        if per_ap != int(per_ap):
            raise ValueError(f"{value:g} antennas do not split over {config.num_aps} APs")
        return with_overrides(config, {"ap_antennas": int(per_ap)}), csi
    key = aliases.get(axis, axis)
    return with_overrides(config, {key: int(value) if key == "ris_elements" else value}), csi


@dataclass
class MonteCarloResult:
    axis: Optional[str]
    values: List[Optional[float]]
    schemes: List[str]
    results: Dict[Tuple[Optional[float], str], List[RunResult]]

    def wsr(self, value, scheme) -> np.ndarray:
        return np.array([r.wsr for r in self.results[(value, scheme)]])

    def rates(self, value, scheme) -> np.ndarray:
        return np.array([r.per_ue_rates for r in self.results[(value, scheme)]])

    def rows(self) -> List[Tuple[Optional[float], str, float, float, int]]:
        out = []
        for v in self.values:
            for s in self.schemes:
                w = self.wsr(v, s)
                se = float(w.std(ddof=1) / np.sqrt(w.size)) if w.size > 1 else 0.0
                out.append((v, s, float(w.mean()), se, int(w.size)))
        return out


def _drop_task(args):
    config, csi, seed, drop, schemes = args
    return run_drop(config, seed, drop, schemes, csi)


def monte_carlo(config: SystemConfig, schemes: Sequence[str], n_drops: int,
                axis: Optional[str] = None, grid: Optional[Sequence[float]] = None,
                csi: Optional[CsiErrorSpec] = None, seed: int = 0,
                jobs: int = 1) -> MonteCarloResult:
    """Run `n_drops` paired drops per sweep value; output independent of `jobs`."""
    if n_drops < 1:
        raise ValueError("n_drops must be >= 1")
    schemes = list(schemes)
    for s in schemes:
        parse_scheme(s)
    csi = csi or CsiErrorSpec()
    values = list(grid) if axis is not None else [None]
    tasks = []
    for v in values:
        cfg, spec = sweep_config(config, csi, axis, v)
        check_config(cfg)
        tasks.extend((cfg, spec, seed, d, schemes) for d in range(n_drops))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_drop_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        outputs = [_drop_task(t) for t in tasks]
    results: Dict = {(v, s): [] for v in values for s in schemes}
    for i, drop_results in enumerate(outputs):
        v = values[i // n_drops]
        for r in drop_results:
            results[(v, r.scheme)].append(r)
    return MonteCarloResult(axis, values, schemes, results)


def empirical_cdf(samples) -> Tuple[np.ndarray, np.ndarray]:
    x = np.sort(np.asarray(samples, dtype=float))
    return x, np.arange(1, x.size + 1) / x.size


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def provenance() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True,
                             text=True, cwd=Path(__file__).resolve().parent, timeout=5)
        rev = out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"
    except (OSError, subprocess.SubprocessError):
        rev = "unknown"
    return f"riscf {__version__} (git {rev})"


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def _header(config: SystemConfig, extra: Sequence[str]) -> str:
    lines = [f"# {provenance()}"] + [f"# {e}" for e in extra]
    return "\n".join(lines) + "\n" + dump_config(config, prefix="# ")


def aggregate_csv(result: MonteCarloResult, config: SystemConfig,
                  extra: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    buf.write(_header(config, extra))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["sweep_value", "scheme", "mean_wsr", "stderr", "n"])
    for v, s, mean, se, n in result.rows():
        writer.writerow([_fmt(v), s, repr(mean), repr(se), n])
    return buf.getvalue()


def cdf_csv(result: MonteCarloResult, config: SystemConfig, extra: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    buf.write(_header(config, extra))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["scheme", "wsr", "cdf"])
    v = result.values[0]
    for s in result.schemes:
        x, F = empirical_cdf(result.wsr(v, s))
        for xi, fi in zip(x, F):
            writer.writerow([s, repr(float(xi)), repr(float(fi))])
    return buf.getvalue()
