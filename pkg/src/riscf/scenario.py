"""System configuration and 3-D network geometry."""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "ConfigError", "SystemConfig", "Topology", "validate_config", "check_config",
    "generate_topology", "load_config", "dump_config", "with_overrides",
    "dbm_to_mw", "CONFIG_SECTIONS",
]


class ConfigError(ValueError):
    """Raised when a configuration violates one or more invariants."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


@dataclass(frozen=True)
class SystemConfig:
    # dimensions
    num_aps: int = 4
    num_ues: int = 6
    num_ris: int = 4
    ap_antennas: int = 4
    ue_antennas: int = 2
    ris_grid_h: int = 10
    ris_grid_v: int = 10
    ris_elements: int = 100
    streams: Optional[int] = None
    # power
    max_power_dbm: float = 23.0
    noise_dbm: float = -100.0
    weights: Optional[Tuple[float, ...]] = None
    # matching
    quota_ue_per_ris: Optional[int] = None
    quota_ris_per_ue: Optional[int] = None
    rejection_ratio: float = 0.05
    # large- and small-scale channel model
    alpha_au: float = 4.0
    alpha_ar: float = 2.2
    alpha_ru: float = 2.2
    pl_ref_db: float = 32.4
    carrier_ghz: float = 3.5
    rician_ar: float = 3.0
    rician_ru: float = 3.0
    rician_au: float = 0.0
    # geometry, meters
    side_ap: float = 300.0
    diameter_ris: float = 200.0
    side_ue: float = 100.0
    height_ap: float = 10.0
    height_ris: float = 6.0
    height_ue: float = 1.5
    ris_placement: str = "ring"
    ris_ring_offset_deg: float = 0.0
    # algorithm
    bisection_tol: float = 1e-4
    dual_tol: float = 1e-4
    mm_tol: float = 1e-3
    mm_max_iter: int = 50
    bd_max_outer: int = 50
    bisection_max_iter: int = 200
    mu_init: float = 5.0
    mm_init: str = "ones"
    weighted_aggregate: bool = False
    rng_seed: int = 0

    def __post_init__(self):
        # derived defaults: N_s = N_r, omega = 1, U_match = K/2, R_match = M/2
        if self.streams is None:
            object.__setattr__(self, "streams", self.ue_antennas)
        if self.weights is None:
            object.__setattr__(self, "weights", (1.0,) * self.num_ues)
        else:
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.quota_ue_per_ris is None:
            object.__setattr__(self, "quota_ue_per_ris", max(1, self.num_ues // 2))
        if self.quota_ris_per_ue is None:
            object.__setattr__(self, "quota_ris_per_ue", max(1, self.num_ris // 2))

    @property
    def max_power_mw(self) -> float:
        return dbm_to_mw(self.max_power_dbm)

    @property
    def noise_mw(self) -> float:
        return dbm_to_mw(self.noise_dbm)

    @property
    def total_tx_antennas(self) -> int:
        return self.num_aps * self.ap_antennas

    @property
    def weight_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    def as_dict(self) -> Dict[str, Any]:
        d = dataclasses.asdict(self)
        d["weights"] = list(self.weights)
        return d


def validate_config(config: SystemConfig) -> List[str]:
    """Return every violated invariant of `config` (empty list means valid)."""
    c = config
    errors = []
    counts = {
        "num_aps": c.num_aps, "num_ues": c.num_ues, "num_ris": c.num_ris,
        "ap_antennas": c.ap_antennas, "ue_antennas": c.ue_antennas,
        "ris_grid_h": c.ris_grid_h, "ris_grid_v": c.ris_grid_v,
        "ris_elements": c.ris_elements, "streams": c.streams,
        "quota_ue_per_ris": c.quota_ue_per_ris, "quota_ris_per_ue": c.quota_ris_per_ue,
        "mm_max_iter": c.mm_max_iter, "bd_max_outer": c.bd_max_outer,
        "bisection_max_iter": c.bisection_max_iter,
    }
    for name, value in counts.items():
        if int(value) != value or value < 1:
            errors.append(f"{name} must be a positive integer (got {value})")
    if c.num_ues * c.ue_antennas > c.num_aps * c.ap_antennas:
        errors.append(
            f"K·N_r > B·N_t ({c.num_ues}·{c.ue_antennas} = {c.num_ues * c.ue_antennas}"
            f" > {c.num_aps}·{c.ap_antennas} = {c.num_aps * c.ap_antennas})")
    if c.streams > c.ue_antennas:
        errors.append(f"N_s > N_r ({c.streams} > {c.ue_antennas})")
    if c.ris_elements != c.ris_grid_h * c.ris_grid_v:
        errors.append(f"N != N_h·N_v ({c.ris_elements} != {c.ris_grid_h}·{c.ris_grid_v})")
    if not 0.0 < c.rejection_ratio < 1.0:
        errors.append(f"rejection_ratio out of (0,1) (got {c.rejection_ratio})")
    if len(c.weights) != c.num_ues:
        errors.append(f"weights has length {len(c.weights)}, expected K = {c.num_ues}")
    if any(not w > 0 for w in c.weights):
        errors.append(f"weights must all be > 0 (got {list(c.weights)})")
    for name in ("bisection_tol", "dual_tol", "mm_tol"):
        if not getattr(c, name) > 0:
            errors.append(f"{name} must be > 0 (got {getattr(c, name)})")
    for name in ("rician_ar", "rician_ru", "rician_au"):
        if not getattr(c, name) >= 0:
            errors.append(f"{name} must be >= 0 (got {getattr(c, name)})")
    if not c.carrier_ghz > 0:
        errors.append(f"carrier_ghz must be > 0 (got {c.carrier_ghz})")
    for name in ("side_ap", "diameter_ris", "side_ue"):
        if not getattr(c, name) >= 0:
            errors.append(f"{name} must be >= 0 (got {getattr(c, name)})")
    if c.ris_placement not in ("ring", "disk"):
        errors.append(f"ris_placement must be 'ring' or 'disk' (got {c.ris_placement!r})")
    if c.mm_init not in ("ones", "random"):
        errors.append(f"mm_init must be 'ones' or 'random' (got {c.mm_init!r})")
    if c.mu_init < 0:
        errors.append(f"mu_init must be >= 0 (got {c.mu_init})")
    return errors


def check_config(config: SystemConfig) -> SystemConfig:
    errors = validate_config(config)
    if errors:
        raise ConfigError(errors)
    return config


# ---------------------------------------------------------------------------
# config files and overrides
# ---------------------------------------------------------------------------

CONFIG_SECTIONS = {
    "system": ["num_aps", "num_ues", "num_ris", "ap_antennas", "ue_antennas",
               "ris_grid_h", "ris_grid_v", "ris_elements", "streams"],
    "power": ["max_power_dbm", "noise_dbm", "weights"],
    "matching": ["quota_ue_per_ris", "quota_ris_per_ue", "rejection_ratio"],
    "channel": ["alpha_au", "alpha_ar", "alpha_ru", "pl_ref_db", "carrier_ghz",
                "rician_ar", "rician_ru", "rician_au"],
    "geometry": ["side_ap", "diameter_ris", "side_ue", "height_ap", "height_ris",
                 "height_ue", "ris_placement", "ris_ring_offset_deg"],
    "algorithm": ["bisection_tol", "dual_tol", "mm_tol", "mm_max_iter", "bd_max_outer",
                  "bisection_max_iter", "mu_init", "mm_init", "weighted_aggregate"],
    "run": ["rng_seed"],
}

_FIELDS = {f.name: f for f in dataclasses.fields(SystemConfig)}
_INT_FIELDS = {name for name, f in _FIELDS.items() if "int" in str(f.type)}
_BOOL_FIELDS = {"weighted_aggregate"}
_STR_FIELDS = {"ris_placement", "mm_init"}


def _parse_value(key: str, text: str) -> Any:
    text = text.strip()
    if key not in _FIELDS:
        raise ConfigError([f"unknown config key {key!r}"])
    try:
        if key == "weights":
            return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())
        if text.lower() in ("none", "auto", ""):
            if _FIELDS[key].default is None:
                return None
            raise ValueError("value required")
        if key in _BOOL_FIELDS:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError("not a boolean")
        if key in _STR_FIELDS:
            return text
        if key in _INT_FIELDS:
            value = float(text)
            if value != int(value):
                raise ValueError("not an integer")
            return int(value)
        return float(text)
    except ValueError as exc:
        raise ConfigError([f"bad value for {key}: {text!r} ({exc})"]) from None


def _grid_for(n: int) -> Tuple[int, int]:
    # most square N_h x N_v factorization with N_h <= N_v
    h = int(math.isqrt(n))
    while h > 1 and n % h:
        h -= 1
    return h, n // h


def with_overrides(config: SystemConfig, overrides: Dict[str, Any]) -> SystemConfig:
    """Return a copy of `config` with `overrides` applied.

    Values may be strings (parsed as in the config file) or Python values.
    Fields whose value was auto-derived from a changed dimension (weights,
    quotas, streams, RIS grid) are re-derived unless overridden explicitly.
    """
    parsed = {}
    for key, value in overrides.items():
        if key not in _FIELDS:
            raise ConfigError([f"unknown config key {key!r}"])
        parsed[key] = _parse_value(key, value) if isinstance(value, str) else value
    d = dataclasses.asdict(config)
    derived = {
        "weights": (1.0,) * config.num_ues,
        "quota_ue_per_ris": max(1, config.num_ues // 2),
        "quota_ris_per_ue": max(1, config.num_ris // 2),
        "streams": config.ue_antennas,
    }
    for key, auto in derived.items():
        if key not in parsed and tuple(np.atleast_1d(d[key])) == tuple(np.atleast_1d(auto)):
            d[key] = None
    if "ris_elements" in parsed and not {"ris_grid_h", "ris_grid_v"} & parsed.keys():
        d["ris_grid_h"], d["ris_grid_v"] = _grid_for(int(parsed["ris_elements"]))
    elif {"ris_grid_h", "ris_grid_v"} & parsed.keys() and "ris_elements" not in parsed:
        d["ris_elements"] = (parsed.get("ris_grid_h", d["ris_grid_h"])
                             * parsed.get("ris_grid_v", d["ris_grid_v"]))
    d.update(parsed)
    if d["weights"] is not None:
        d["weights"] = tuple(d["weights"])
    return SystemConfig(**d)


def load_config(path, overrides: Optional[Dict[str, Any]] = None) -> SystemConfig:
    """Read an INI-style ``key = value`` file; section names are organisational only."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    text = Path(path).read_text()
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError([f"cannot parse {path}: {exc}"]) from None
    values = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            values[key] = value
    config = with_overrides(SystemConfig(), values)
    if overrides:
        config = with_overrides(config, overrides)
    return config


def _format(value: Any) -> str:
    if isinstance(value, (tuple, list)):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(config: SystemConfig, prefix: str = "") -> str:
    """Render `config` in the config-file format, each line prefixed by `prefix`."""
    lines = []
    for section, keys in CONFIG_SECTIONS.items():
        lines.append(f"{prefix}[{section}]")
        for key in keys:
            lines.append(f"{prefix}{key} = {_format(getattr(config, key))}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Topology:
    ap_positions: np.ndarray   # (B, 3)
    ris_positions: np.ndarray  # (M, 3)
    ue_positions: np.ndarray   # (K, 3)

    def __eq__(self, other):
        if not isinstance(other, Topology):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("ap_positions", "ris_positions", "ue_positions"))


def _square_perimeter_points(num: int, side: float) -> np.ndarray:
    # equally spaced along the perimeter, starting at the (+, +) vertex and
    # running counter-clockwise; num = 4 gives exactly the four vertices
    half = side / 2.0
    corners = np.array([[half, half], [-half, half], [-half, -half], [half, -half]])
    s = np.arange(num) * 4.0 / num
    edge = np.floor(s).astype(int) % 4
    frac = (s - np.floor(s))[:, None]
    return corners[edge] + frac * (corners[(edge + 1) % 4] - corners[edge])


def generate_topology(config: SystemConfig, rng: np.random.Generator) -> Topology:
    c = config
    ap_xy = _square_perimeter_points(c.num_aps, c.side_ap)

    ue_xy = rng.uniform(-c.side_ue / 2, c.side_ue / 2, size=(c.num_ues, 2))

    radius = c.diameter_ris / 2.0
    if c.ris_placement == "ring":
        angles = np.deg2rad(c.ris_ring_offset_deg) + 2 * np.pi * np.arange(c.num_ris) / c.num_ris
        r = np.full(c.num_ris, radius)
    else:
        angles = rng.uniform(0, 2 * np.pi, size=c.num_ris)
        r = radius * np.sqrt(rng.uniform(0, 1, size=c.num_ris))
    ris_xy = np.stack([r * np.cos(angles), r * np.sin(angles)], axis=1)

    def lift(xy, h):
        return np.column_stack([xy, np.full(len(xy), float(h))])

    return Topology(lift(ap_xy, c.height_ap), lift(ris_xy, c.height_ris), lift(ue_xy, c.height_ue))
