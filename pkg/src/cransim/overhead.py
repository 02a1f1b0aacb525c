"""TDD frame overhead of position beacons and CSI pilots, and the resulting throughput."""

from __future__ import annotations

from dataclasses import dataclass

from cransim.errors import ConfigError, ContractError


@dataclass(frozen=True)
class FrameConfig:
    """Resource grid of one TDD frame and the per-user pilot footprints.

    ``f_sc_pos=None`` splits the beacon symbol's subcarriers evenly between
    the users being located. ``t_sym_csi`` counts the pilot symbol plus the
    cyclic-prefix compensation gap that must follow it.
    """

    t_sym_total: int = 42
    f_sc_total: float = 833
    duration: float = 0.2e-3
    t_sym_pos: int = 1
    f_sc_pos: float | None = None
    t_sym_csi: int = 2
    f_sc_csi: float | None = None  # None = full band
    extra_csi_users: int = 1  # nearby users whose CSI is also needed in the realistic case

    def __post_init__(self):
        if self.t_sym_total <= 0 or self.f_sc_total <= 0:
            raise ConfigError("frame totals must be positive", "t_sym_total")
        if not 0 <= self.t_sym_pos <= self.t_sym_total:
            raise ConfigError("beacon symbols exceed the frame", "t_sym_pos")
        if self.f_sc_pos is not None and not 0 <= self.f_sc_pos <= self.f_sc_total:
            raise ConfigError("beacon subcarriers exceed the band", "f_sc_pos")
        if not 0 <= self.t_sym_csi <= self.t_sym_total:
            raise ConfigError("CSI pilot symbols exceed the frame", "t_sym_csi")
        if self.f_sc_csi is not None and not 0 <= self.f_sc_csi <= self.f_sc_total:
            raise ConfigError("CSI pilot subcarriers exceed the band", "f_sc_csi")
        if self.extra_csi_users < 0:
            raise ConfigError("must be >= 0", "extra_csi_users")

    @property
    def resource_elements(self) -> float:
        return self.t_sym_total * self.f_sc_total


@dataclass(frozen=True)
class OverheadReport:
    scheme: str
    oh_pos: float
    oh_csi: float
    effective_throughput: float


def _check_users(num_users):
    if num_users < 1:
        raise ContractError("need at least one user")


def position_overhead(cfg: FrameConfig, num_users: int) -> float:
    """Share of the frame spent on narrow-band positioning beacons for ``num_users``.

    Beacons are frequency-multiplexed into the first ``t_sym_pos`` symbols,
    so the total never exceeds that block.
    """
    _check_users(num_users)
    f_pos = cfg.f_sc_total / num_users if cfg.f_sc_pos is None else cfg.f_sc_pos
    per_user = cfg.t_sym_pos * f_pos / cfg.resource_elements
    return min(per_user * num_users, cfg.t_sym_pos / cfg.t_sym_total)


def csi_overhead(cfg: FrameConfig, num_users: int) -> float:
    """Share of the frame spent on full-band CSI pilots for ``num_users``."""
    _check_users(num_users)
    if num_users * cfg.t_sym_csi > cfg.t_sym_total:
        feasible = cfg.t_sym_total // cfg.t_sym_csi if cfg.t_sym_csi else num_users
        raise ConfigError(
            f"{num_users} users need {num_users * cfg.t_sym_csi} pilot symbols but the frame has "
            f"{cfg.t_sym_total}; at most {feasible} users fit",
            "num_users",
        )
    f_csi = cfg.f_sc_total if cfg.f_sc_csi is None else cfg.f_sc_csi
    per_user = cfg.t_sym_csi * f_csi / cfg.resource_elements
    return per_user * num_users


def effective_throughput(raw_goodput: float, oh: float, tti: float) -> float:
    """Goodput per TTI turned into bits/s after removing the overhead share."""
    if not 0 <= oh <= 1:
        raise ContractError(f"overhead fraction {oh} outside [0, 1]")
    return raw_goodput / tti * (1 - oh)
