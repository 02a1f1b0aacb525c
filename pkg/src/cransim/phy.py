"""Beam codebooks, received power, SINR, transport capacity and the packet error model."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from cransim.errors import ConfigError, ContractError

BOLTZMANN_DBM_PER_HZ = -174.0


def thermal_noise_watts(bandwidth_hz: float, noise_figure_db: float) -> float:
    """kTB noise plus receiver noise figure, in watts."""
    dbm = BOLTZMANN_DBM_PER_HZ + 10 * math.log10(bandwidth_hz) + noise_figure_db
    return 10 ** (dbm / 10) * 1e-3


@dataclass(frozen=True)
class PhyConfig:
    p_tx: float = 1e-3
    bandwidth: float = 5e6
    tti: float = 1e-3
    noise_figure_db: float = 3.0
    noise_power: float | None = None  # overrides the thermal-noise default

    def __post_init__(self):
        for key in ("p_tx", "bandwidth", "tti"):
            if not getattr(self, key) > 0:
                raise ConfigError("must be > 0", key)
        if self.noise_power is not None and not self.noise_power > 0:
            raise ConfigError("must be > 0", "noise_power")

    @property
    def noise(self) -> float:
        if self.noise_power is not None:
            return self.noise_power
        return thermal_noise_watts(self.bandwidth, self.noise_figure_db)

    @property
    def symbols(self) -> float:
        """Symbol budget per TTI, S = TTI x BW."""
        return self.tti * self.bandwidth


def steering_vector(num_antennas: int, angle_deg) -> np.ndarray:
    """Unit-norm response of a half-wavelength ULA; broadside is 0 deg.

    A scalar angle gives shape (N,); an array of angles gives (..., N).
    """
    k = np.arange(num_antennas)
    phase = np.pi * np.sin(np.radians(np.asarray(angle_deg, dtype=float)))[..., None] * k
    return np.exp(1j * phase) / math.sqrt(num_antennas)


@dataclass(frozen=True, eq=False)
class Codebook:
    side: str  # "transmit" or "receive"
    vectors: np.ndarray  # (num_beams, num_antennas), unit-norm rows
    angles: np.ndarray  # boresight angle of each beam, degrees
    grid_step: float
    coverage: tuple[float, float]

    def __len__(self):
        return len(self.vectors)

    @property
    def num_antennas(self) -> int:
        return self.vectors.shape[1]

    def angle_of(self, index: int) -> float:
        return float(self.angles[index])

    def index_of(self, angle_deg: float) -> int:
        """Beam whose boresight is nearest ``angle_deg`` (clamped to coverage)."""
        return int(np.argmin(np.abs(self.angles - angle_deg)))


def build_codebook(side: str, num_antennas: int, grid_step_deg: float,
                   coverage: tuple[float, float] = (-60.0, 60.0)) -> Codebook:
    if side not in ("transmit", "receive"):
        raise ConfigError(f"unknown codebook side {side!r}", "side")
    if num_antennas < 1:
        raise ConfigError("must be >= 1", "num_antennas")
    if not grid_step_deg > 0:
        raise ConfigError("grid step must be > 0", "grid_step_deg")
    lo, hi = coverage
    if hi - lo < grid_step_deg:
        raise ConfigError(f"coverage {coverage} narrower than one {grid_step_deg} deg step", "coverage")
    count = int(math.floor((hi - lo) / grid_step_deg + 1e-9)) + 1
    angles = lo + grid_step_deg * np.arange(count)
    vectors = steering_vector(num_antennas, angles)
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    return Codebook(side, vectors, angles, float(grid_step_deg), (float(lo), float(hi)))


def received_power(H, u, v, h_pl: float, p_tx: float) -> float:
    """P_Tx * h_PL^2 * |u^H H v|^2."""
    H = np.asarray(getattr(H, "entries", H))
    u = np.asarray(u)
    v = np.asarray(v)
    if H.ndim != 2 or u.shape != (H.shape[0],) or v.shape != (H.shape[1],):
        raise ContractError(f"incompatible shapes H{H.shape}, u{u.shape}, v{v.shape}")
    return float(p_tx * h_pl**2 * abs(np.vdot(u, H @ v)) ** 2)


def sinr(signal_power: float, interference_powers, noise: float) -> float:
    interference = list(interference_powers)
    if not noise > 0:
        raise ContractError("noise power must be > 0")
    if signal_power < 0 or any(p < 0 for p in interference):
        raise ContractError("powers must be >= 0")
    return signal_power / (noise + math.fsum(interference))


def transport_capacity(gamma, s: float):
    """Shannon transport capacity S * log2(1 + gamma), in bits per TTI."""
    if np.any(np.asarray(gamma) < 0):
        raise ContractError("gamma must be >= 0")
    return s * np.log2(1.0 + gamma)


def transmission_outcome(packet_size, capacity):
    """A packet gets through iff its size is strictly below the capacity."""
    return packet_size < capacity
