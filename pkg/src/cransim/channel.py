"""Geometric LOS + single-bounce scattering channel between RRHs and users.

The channel matrix excludes pathloss; :func:`pathloss_gain` supplies the
amplitude factor applied on top of it when computing received power.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from cransim.errors import ContractError
from cransim.phy import Codebook, PhyConfig, steering_vector
from cransim.scenario import Scenario, advance, bearing_deg, blocking_objects, wrap_deg

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class PathlossModel:
    carrier_hz: float = 3.5e9

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz


def pathloss_gain(distance: float, model: PathlossModel = PathlossModel()) -> float:
    """Free-space (Friis) amplitude gain lambda / (4 pi d)."""
    if not distance > 0:
        raise ContractError(f"distance must be > 0, got {distance}")
    return model.wavelength / (4 * math.pi * distance)


@dataclass(frozen=True)
class ShadowConfig:
    base_db: float = 10.0
    ref_height: float = 1.5
    slope_db_per_m: float = 2.0
    max_db: float = 30.0


def shadow_penalty(blocked: bool, object_height: float, config: ShadowConfig = ShadowConfig()) -> float:
    """Amplitude factor applied to a LOS ray blocked by an object of the given height."""
    if object_height < 0:
        raise ContractError("object height must be >= 0")
    if not blocked:
        return 1.0
    att_db = config.base_db + config.slope_db_per_m * (object_height - config.ref_height)
    att_db = min(max(att_db, 0.0), config.max_db)
    return 10 ** (-att_db / 20)


@dataclass(frozen=True)
class ChannelModel:
    pathloss: PathlossModel = field(default_factory=PathlossModel)
    shadow: ShadowConfig = field(default_factory=ShadowConfig)
    include_los: bool = True
    include_scatterers: bool = True


@dataclass(frozen=True, eq=False)
class ChannelMatrix:
    entries: np.ndarray  # (N_Rx, R_Tx) complex
    rrh: int
    user: int
    tti_index: int
    distance_m: float
    outage: bool = False

    @property
    def shape(self):
        return self.entries.shape


def _channel_entries(rrh, user, scenario: Scenario, model: ChannelModel) -> tuple[np.ndarray, float]:
    lam = model.pathloss.wavelength
    tx = rrh.position.as_array()
    rx = user.position.as_array()
    d_los = float(np.linalg.norm(rx - tx))
    H = np.zeros((user.num_antennas, rrh.num_antennas), dtype=complex)

    if model.include_los:
        amp = 1.0
        for obj in blocking_objects(rrh.position, user.position, scenario.shadows):
            amp *= shadow_penalty(True, obj.height, model.shadow)
        aod = wrap_deg(bearing_deg(tx, rx) - rrh.boresight_azimuth)
        aoa = wrap_deg(bearing_deg(rx, tx) - user.heading)
        a_tx = steering_vector(rrh.num_antennas, aod)
        a_rx = steering_vector(user.num_antennas, aoa)
        H += amp * np.exp(-2j * np.pi * d_los / lam) * np.outer(a_rx, a_tx.conj())

    pts = scenario.scatterers.points
    if model.include_scatterers and len(pts):
        d1 = np.linalg.norm(pts - tx, axis=1)
        d2 = np.linalg.norm(pts - rx, axis=1)
        path = d1 + d2
        amp = scenario.scatterers.gains * (d_los / path) * np.exp(-2j * np.pi * path / lam)
        aod = wrap_deg(bearing_deg(tx, pts) - rrh.boresight_azimuth)
        aoa = wrap_deg(bearing_deg(rx, pts) - user.heading)
        A_tx = steering_vector(rrh.num_antennas, aod)  # (S, R)
        A_rx = steering_vector(user.num_antennas, aoa)  # (S, N)
        H += np.einsum("s,sn,sr->nr", amp, A_rx, A_tx.conj())
    return H, d_los


def channel_matrix(scenario: Scenario, rrh: int, user: int, tti_index: int = 0,
                   model: ChannelModel = ChannelModel()) -> ChannelMatrix:
    """Channel from ``rrh`` to ``user`` after ``tti_index`` TTIs of user motion."""
    if tti_index:
        scenario = advance(scenario, tti_index)
    H, d = _channel_entries(scenario.rrh(rrh), scenario.user(user), scenario, model)
    return ChannelMatrix(H, rrh, user, tti_index, d, outage=not np.any(H))


def link_gains(scenario: Scenario, phy: PhyConfig, tx_codebook: Codebook, rx_codebook: Codebook,
               model: ChannelModel = ChannelModel()) -> np.ndarray:
    """Received power of every (victim, transmitter, filter, beam) combination.

    ``G[n, m, f, b]`` is the power user ``n`` collects through receive filter
    ``f`` when the RRH serving user ``m`` transmits on beam ``b``, pathloss and
    transmit power included. Users are indexed in ``scenario.users`` order.
    """
    users = scenario.users
    n_users = len(users)
    G = np.empty((n_users, n_users, len(rx_codebook), len(tx_codebook)))
    V = tx_codebook.vectors.T  # (R, B)
    U = rx_codebook.vectors.conj()  # (F, N)
    for n, victim in enumerate(users):
        for m, other in enumerate(users):
            rrh = scenario.rrh(other.serving_rrh)
            H, d = _channel_entries(rrh, victim, scenario, model)
            h_pl = pathloss_gain(d, model.pathloss)
            G[n, m] = phy.p_tx * h_pl**2 * np.abs(U @ H @ V) ** 2
    return G


def write_channel_dump(path, matrices) -> None:
    """Write channel matrices as rows of (rrh, user, tti, row, col, re, im)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rrh", "user", "tti", "row", "col", "re", "im"])
        for cm in matrices:
            for (i, j), h in np.ndenumerate(cm.entries):
                w.writerow([cm.rrh, cm.user, cm.tti_index, i, j, repr(float(h.real)), repr(float(h.imag))])


def read_channel_dump(path) -> dict[tuple[int, int, int], np.ndarray]:
    cells: dict[tuple[int, int, int], dict[tuple[int, int], complex]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["rrh"]), int(row["user"]), int(row["tti"]))
            cells.setdefault(key, {})[(int(row["row"]), int(row["col"]))] = complex(
                float(row["re"]), float(row["im"])
            )
    out = {}
    for key, entries in cells.items():
        nr = 1 + max(i for i, _ in entries)
        nc = 1 + max(j for _, j in entries)
        H = np.zeros((nr, nc), dtype=complex)
        for (i, j), h in entries.items():
            H[i, j] = h
        out[key] = H
    return out
