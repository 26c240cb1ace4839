"""Channel synthesis for one network drop: path loss, Rician fading, CSI errors.

Array conventions: half-wavelength spacing, ULAs along the x axis (APs and
UEs), UPAs in the xz-plane (RISs). All powers are linear milliwatts.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .scenario import SystemConfig, Topology

__all__ = [
    "SPEED_OF_LIGHT", "ArraySpec", "ChannelSet", "CsiErrorSpec",
    "path_loss_db", "steering_vector", "los_component", "generate_channels",
    "corrupt_csi", "effective_channel", "effective_channels",
    "dump_channels", "load_channels",
]

SPEED_OF_LIGHT = 299_792_458.0
REFERENCE_DISTANCE = 1.0


def path_loss_db(distance, exponent: float, f_c: float, pl0: float):
    """Large-scale channel gain in dB (a negative number).

    ``-pl0 - 10*exponent*log10(d/d0) - 20*log10(f_c)`` with ``d0 = 1 m`` and
    `f_c` in GHz. Distances below ``d0`` are clamped to ``d0``.
    """
    d = np.maximum(np.asarray(distance, dtype=float), REFERENCE_DISTANCE)
    pl = -pl0 - 10.0 * exponent * np.log10(d / REFERENCE_DISTANCE) - 20.0 * np.log10(f_c)
    return float(pl) if np.ndim(pl) == 0 else pl


@dataclass(frozen=True)
class ArraySpec:
    """Antenna array layout: ``kind`` is ``"ula"`` or ``"upa"``."""

    kind: str
    n_h: int
    n_v: int = 1

    @classmethod
    def ula(cls, n: int) -> "ArraySpec":
        return cls("ula", n, 1)

    @classmethod
    def upa(cls, n_h: int, n_v: int) -> "ArraySpec":
        return cls("upa", n_h, n_v)

    @property
    def size(self) -> int:
        return self.n_h * self.n_v

    def offsets(self) -> np.ndarray:
        """Element positions in half-wavelength units, shape (size, 3)."""
        if self.kind == "ula":
            return np.column_stack([np.arange(self.n_h), np.zeros(self.n_h), np.zeros(self.n_h)])
        if self.kind == "upa":
            h, v = np.meshgrid(np.arange(self.n_h), np.arange(self.n_v), indexing="ij")
            return np.column_stack([h.ravel(), np.zeros(h.size), v.ravel()])
        raise ValueError(f"unknown array kind {self.kind!r}")


def steering_vector(array: ArraySpec, direction: np.ndarray) -> np.ndarray:
    """Response of `array` towards unit vector(s) `direction` (..., 3) -> (..., size)."""
    return np.exp(1j * np.pi * (np.asarray(direction) @ array.offsets().T))


def los_component(tx_pos, rx_pos, tx_array: ArraySpec, rx_array: ArraySpec,
                  wavelength: float = SPEED_OF_LIGHT / 3.5e9) -> np.ndarray:
    """Unit-modulus rank-one LoS matrix of shape (rx_array.size, tx_array.size)."""
    tx_pos = np.asarray(tx_pos, dtype=float)
    rx_pos = np.asarray(rx_pos, dtype=float)
    delta = tx_pos - rx_pos
    d = float(np.linalg.norm(delta))
    if d == 0.0:
        raise ValueError("transmitter and receiver positions coincide")
    u = delta / d
    a_rx = steering_vector(rx_array, u)
    a_tx = steering_vector(tx_array, -u)
    return np.exp(-2j * np.pi * d / wavelength) * np.outer(a_rx, a_tx.conj())


def _los_blocks(tx_pos, rx_pos, tx_array, rx_array, wavelength):
    # batched LoS: (R, T, n_rx, n_tx) plus distances (R, T)
    delta = tx_pos[None, :, :] - rx_pos[:, None, :]
    d = np.linalg.norm(delta, axis=-1)
    u = delta / np.where(d == 0, 1.0, d)[..., None]
    a_rx = steering_vector(rx_array, u)
    a_tx = steering_vector(tx_array, -u)
    los = np.exp(-2j * np.pi * d / wavelength)[..., None, None] * (
        a_rx[..., :, None] * a_tx.conj()[..., None, :])
    return los, d


def _cn(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _rician_weights(beta: float) -> Tuple[float, float]:
    if np.isinf(beta):
        return 1.0, 0.0
    return float(np.sqrt(beta / (1.0 + beta))), float(np.sqrt(1.0 / (1.0 + beta)))


@dataclass(frozen=True)
class ChannelSet:
    """All channels of one drop.

    direct   (K, N_r, B*N_t)  AP blocks concatenated along the columns
    ap_ris   (M, N, B*N_t)
    ris_ue   (M, K, N_r, N)
    The ``*_los`` arrays hold the (path-loss scaled) LoS parts of the cascaded
    links and are used by the LoS-only CSI variant.
    """

    direct: np.ndarray
    ap_ris: np.ndarray
    ris_ue: np.ndarray
    ap_ris_los: Optional[np.ndarray] = None
    ris_ue_los: Optional[np.ndarray] = None

    @property
    def num_ues(self) -> int:
        return self.direct.shape[0]

    @property
    def num_ris(self) -> int:
        return self.ap_ris.shape[0]

    def replace(self, **changes) -> "ChannelSet":
        return dataclasses.replace(self, **changes)

    def without_direct(self) -> "ChannelSet":
        return self.replace(direct=np.zeros_like(self.direct))


def generate_channels(topology: Topology, config: SystemConfig,
                      rng: np.random.Generator) -> ChannelSet:
    c = config
    wavelength = SPEED_OF_LIGHT / (c.carrier_ghz * 1e9)
    ap_arr = ArraySpec.ula(c.ap_antennas)
    ue_arr = ArraySpec.ula(c.ue_antennas)
    ris_arr = ArraySpec.upa(c.ris_grid_h, c.ris_grid_v)
    B, K, M = c.num_aps, c.num_ues, c.num_ris
    Nt, Nr, N = c.ap_antennas, c.ue_antennas, c.ris_elements

    def link(tx, rx, tx_arr, rx_arr, alpha, beta):
        los, d = _los_blocks(tx, rx, tx_arr, rx_arr, wavelength)
        amp = np.sqrt(10.0 ** (path_loss_db(d, alpha, c.carrier_ghz, c.pl_ref_db) / 10.0))
        w_los, w_nlos = _rician_weights(beta)
        nlos = _cn(rng, los.shape)
        amp = amp[..., None, None]
        return amp * (w_los * los + w_nlos * nlos), amp * w_los * los

    ap, ris, ue = topology.ap_positions, topology.ris_positions, topology.ue_positions
    # (K, B, Nr, Nt) -> (K, Nr, B*Nt)
    h_d, _ = link(ap, ue, ap_arr, ue_arr, c.alpha_au, c.rician_au)
    direct = h_d.transpose(0, 2, 1, 3).reshape(K, Nr, B * Nt)
    # (M, B, N, Nt) -> (M, N, B*Nt)
    g, g_los = link(ap, ris, ap_arr, ris_arr, c.alpha_ar, c.rician_ar)
    ap_ris = g.transpose(0, 2, 1, 3).reshape(M, N, B * Nt)
    ap_ris_los = g_los.transpose(0, 2, 1, 3).reshape(M, N, B * Nt)
    # (K, M, Nr, N) -> (M, K, Nr, N)
    h_r, h_r_los = link(ris, ue, ris_arr, ue_arr, c.alpha_ru, c.rician_ru)
    return ChannelSet(direct, ap_ris, h_r.transpose(1, 0, 2, 3),
                      ap_ris_los, h_r_los.transpose(1, 0, 2, 3))


@dataclass(frozen=True)
class CsiErrorSpec:
    """Channel-knowledge model used for the design (not the evaluation)."""

    delta_r: float = 0.0
    delta_d: float = 0.0
    los_only: bool = False

    def __post_init__(self):
        if self.delta_r < 0 or self.delta_d < 0:
            raise ValueError("CSI error ratios must be non-negative")

    @property
    def is_perfect(self) -> bool:
        return self.delta_r == 0 and self.delta_d == 0 and not self.los_only


def corrupt_csi(channels: ChannelSet, spec: CsiErrorSpec,
                rng: np.random.Generator) -> ChannelSet:
    """Estimated channels ``h + e`` with ``e ~ CN(0, delta*|h|^2)`` entrywise.

    Error draws are taken in a fixed order whatever the ratios, so designs at
    different error levels on the same stream share normalised errors. With
    ``los_only`` the cascaded links keep only their LoS parts instead.
    """
    e_d = _cn(rng, channels.direct.shape)
    e_g = _cn(rng, channels.ap_ris.shape)
    e_h = _cn(rng, channels.ris_ue.shape)
    direct = channels.direct + np.sqrt(spec.delta_d) * np.abs(channels.direct) * e_d
    if spec.los_only:
        if channels.ap_ris_los is None or channels.ris_ue_los is None:
            raise ValueError("LoS parts unavailable for los_only CSI")
        ap_ris, ris_ue = channels.ap_ris_los, channels.ris_ue_los
    else:
        ap_ris = channels.ap_ris + np.sqrt(spec.delta_r) * np.abs(channels.ap_ris) * e_g
        ris_ue = channels.ris_ue + np.sqrt(spec.delta_r) * np.abs(channels.ris_ue) * e_h
    return channels.replace(direct=direct, ap_ris=ap_ris, ris_ue=ris_ue)


def effective_channel(channels: ChannelSet, assoc, phases, ue: int) -> np.ndarray:
    """Direct channel of UE `ue` plus its associated RIS cascades, (N_r, B*N_t)."""
    if not 0 <= ue < channels.num_ues:
        raise IndexError(f"UE index {ue} out of range")
    c = _assoc_matrix(assoc)
    phi = _phase_matrix(phases)
    h = channels.direct[ue].copy()
    for m in np.flatnonzero(c[:, ue]):
        h += (channels.ris_ue[m, ue] * phi[m]) @ channels.ap_ris[m]
    return h


def effective_channels(channels: ChannelSet, assoc, phases) -> np.ndarray:
    """Stacked effective channels of all UEs, (K, N_r, B*N_t)."""
    c = _assoc_matrix(assoc).astype(float)
    phi = _phase_matrix(phases)
    # reflected[m, k] = H_r[m, k] diag(phi_m) G_r[m]
    weighted = channels.ris_ue * (phi[:, None, None, :] * c[:, :, None, None])
    return channels.direct + np.einsum("mkrn,mnt->krt", weighted, channels.ap_ris)


def _assoc_matrix(assoc) -> np.ndarray:
    return np.asarray(getattr(assoc, "c", assoc))


def _phase_matrix(phases) -> np.ndarray:
    return np.asarray(getattr(phases, "phi", phases))


# ---------------------------------------------------------------------------
# regression dump format
# ---------------------------------------------------------------------------

_DUMP_FIELDS = {
    "direct": ["ue", "rx_antenna", "tx_antenna"],
    "ap_ris": ["ris", "ris_element", "tx_antenna"],
    "ris_ue": ["ris", "ue", "rx_antenna", "ris_element"],
}


def dump_channels(channels: ChannelSet, path, meta: Optional[dict] = None) -> None:
    """Write `channels` as JSON: dimension-tagged arrays of ``[re, im]`` pairs."""
    doc = {"format": "riscf-channels/1", "meta": meta or {}, "arrays": {}}
    for name, dims in _DUMP_FIELDS.items():
        arr = getattr(channels, name)
        flat = arr.ravel()
        doc["arrays"][name] = {
            "dims": dims,
            "shape": list(arr.shape),
            "data": np.column_stack([flat.real, flat.imag]).tolist(),
        }
    Path(path).write_text(json.dumps(doc))


def load_channels(path) -> ChannelSet:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "riscf-channels/1":
        raise ValueError(f"{path}: not a riscf channel dump")
    arrays = {}
    for name in _DUMP_FIELDS:
        entry = doc["arrays"][name]
        pairs = np.asarray(entry["data"], dtype=float).reshape(-1, 2)
        arrays[name] = (pairs[:, 0] + 1j * pairs[:, 1]).reshape(entry["shape"])
    return ChannelSet(**arrays)
