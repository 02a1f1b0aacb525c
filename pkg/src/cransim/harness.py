"""Experiment pipeline: training phase, scheme comparison, robustness sweeps, overhead study.

A run is a pure function of (config, seed). Training draws ``num_positions``
snapshots: in snapshot ``k`` every user stands at its k-th sampled candidate
position. Test snapshots are the same snapshots advanced by
``test_offset_ttis`` TTIs of user motion, so the true positions differ
slightly from the stored training positions.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass

import numpy as np

from cransim import allocator as alloc
from cransim import forest as rf_mod
from cransim.channel import link_gains
from cransim.config import ExperimentConfig
from cransim.overhead import csi_overhead, effective_throughput, position_overhead
from cransim.phy import build_codebook
from cransim.scenario import Scenario, Vec3, advance, build_scenario, candidate_positions, with_user_positions

RESULT_COLUMNS = (
    "experiment", "seed", "scheme", "sweep_value", "sum_goodput_bits_per_tti",
    "relative_to_genie", "overhead_fraction", "effective_throughput_bps",
)
SCHEMES = ("genie", "learned", "learned_predicted", "random", "geometric")

# Seed-sequence stream ids, disjoint from the ones used inside scenario.py.
_STREAM_SAMPLING = 10
_STREAM_BALANCE = 11
_STREAM_POSITION_NOISE = 12
_STREAM_SCHEME = 20


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    seed: int
    scheme: str
    sweep_value: float
    sum_goodput_bits_per_tti: float
    relative_to_genie: float
    overhead_fraction: float
    effective_throughput_bps: float

    def as_csv(self) -> list[str]:
        return [self.experiment, str(self.seed), self.scheme, repr(float(self.sweep_value)),
                repr(float(self.sum_goodput_bits_per_tti)), repr(float(self.relative_to_genie)),
                repr(float(self.overhead_fraction)), repr(float(self.effective_throughput_bps))]

    @classmethod
    def from_csv(cls, row) -> "ResultRow":
        return cls(row[0], int(row[1]), row[2], *(float(v) for v in row[3:]))


@dataclass(frozen=True)
class AccuracyRow:
    n_trees: int
    max_depth: int
    training_accuracy: float
    rows: int
    tiny_data: bool


@dataclass
class TrainingArtifacts:
    seed: int
    scenario: Scenario
    positions: np.ndarray  # (snapshots, users, 3)
    records: list
    packet_sizes: alloc.PacketSizeSet
    training_set: rf_mod.TrainingSet
    forest: rf_mod.RandomForest
    accuracy: list
    index: alloc.TrainingIndex
    tx_codebook: object
    rx_codebook: object


def codebooks(cfg: ExperimentConfig):
    s = cfg.scenario
    tx = build_codebook("transmit", s.rrh_antennas, cfg.tx_grid_step, cfg.tx_coverage)
    rx = build_codebook("receive", s.user_antennas, cfg.rx_grid_step, cfg.rx_coverage)
    return tx, rx


def _scenario_for(cfg: ExperimentConfig, seed: int, **overrides) -> Scenario:
    return build_scenario(dataclasses.replace(cfg.scenario, seed=seed, **overrides))


def sample_positions(cfg: ExperimentConfig, scenario: Scenario, seed: int) -> np.ndarray:
    rng = _rng(seed, _STREAM_SAMPLING)
    per_user = []
    for u in scenario.users:
        cands = candidate_positions(scenario, u.id, cfg.scenario.candidate_positions)
        per_user.append(cands[rng.choice(len(cands), size=cfg.num_positions, replace=False)])
    return np.stack(per_user, axis=1)


def _genie(cfg, scenario, tx, rx, snapshot):
    G = link_gains(scenario, cfg.phy, tx, rx, cfg.channel)
    records = alloc.genie_search(scenario, cfg.phy, tx, rx, cfg.channel, snapshot, gains=G,
                                 exact_limit=cfg.exact_search_limit)
    return G, records


def run_training_phase(cfg: ExperimentConfig, seed: int) -> TrainingArtifacts:
    """Genie labels over the sampled snapshots, packet-size design, and the forest grid."""
    tx, rx = codebooks(cfg)
    scenario = _scenario_for(cfg, seed)
    positions = sample_positions(cfg, scenario, seed)
    records = []
    for k in range(len(positions)):
        _, recs = _genie(cfg, with_user_positions(scenario, positions[k]), tx, rx, k)
        records.extend(recs)
    sizes = alloc.design_packet_sizes([r.capacity for r in records])
    records = alloc.label_records(records, sizes)
    ts = alloc.build_training_set(records, sizes, _rng(seed, _STREAM_BALANCE), cfg.max_training_rows)

    tiny = len(positions) < 10
    accuracy = []
    chosen = None
    grid = list(cfg.forest.grid)
    if (cfg.forest.n_trees, cfg.forest.max_depth) not in grid:
        grid.append((cfg.forest.n_trees, cfg.forest.max_depth))
    for n_trees, depth in grid:
        forest = rf_mod.train(ts, n_trees, depth, cfg.forest.features_per_split, seed)
        accuracy.append(AccuracyRow(n_trees, depth, rf_mod.accuracy(forest, ts), len(ts), tiny))
        if (n_trees, depth) == (cfg.forest.n_trees, cfg.forest.max_depth):
            chosen = forest
    return TrainingArtifacts(seed, scenario, positions, records, sizes, ts, chosen, accuracy,
                             alloc.TrainingIndex(records), tx, rx)


def _reported_scenario(scenario: Scenario, reported) -> Scenario:
    return with_user_positions(scenario, reported)


def _evaluate_snapshot(cfg, art: TrainingArtifacts, test: Scenario, k: int, reported_sets):
    """Per-scheme system goodput of one test snapshot for each set of reported positions."""
    G, records = _genie(cfg, test, art.tx_codebook, art.rx_codebook, k)
    genie = sum(d.goodput for d in alloc.allocate_genie(records, art.packet_sizes))
    out = []
    for reported in reported_sets:
        rng_learned = _rng(art.seed, _STREAM_SCHEME, 0, k)
        rng_random = _rng(art.seed, _STREAM_SCHEME, 1, k)
        rng_geo = _rng(art.seed, _STREAM_SCHEME, 2, k)
        ids = [u.id for u in test.users]
        learned = alloc.allocate_learned(art.forest, [Vec3.of(p) for p in reported], art.index,
                                         art.packet_sizes, rng_learned, ids, cfg.backoff_mode)
        # The random baseline gets the optimal beams stored for the matched training position.
        matched = [art.index.match(uid, Vec3.of(p))[0] for uid, p in zip(ids, reported)]
        random = alloc.allocate_random(matched, art.packet_sizes, rng_random)
        # Geometric beams point at the reported location.
        geo = alloc.allocate_geometric(_reported_scenario(test, reported), art.packet_sizes, rng_geo,
                                       art.tx_codebook, art.rx_codebook, G, cfg.phy)
        out.append({
            "genie": genie,
            "learned": float(alloc.realized_goodput(learned, G, cfg.phy).sum()),
            "learned_predicted": float(sum(d.goodput for d in learned)),
            "random": float(alloc.realized_goodput(random, G, cfg.phy).sum()),
            "geometric": float(alloc.realized_goodput(geo, G, cfg.phy).sum()),
        })
    return out


def _rows(experiment, seed, sweep_value, totals, n_snapshots, tti):
    genie = totals["genie"]
    rows = []
    for scheme in SCHEMES:
        mean = totals[scheme] / n_snapshots
        rel = totals[scheme] / genie if genie > 0 else 0.0
        rows.append(ResultRow(experiment, seed, scheme, float(sweep_value), mean, rel, 0.0,
                              effective_throughput(mean, 0.0, tti)))
    return rows


def _test_scenarios(cfg, art: TrainingArtifacts, scenario: Scenario):
    for k in range(len(art.positions)):
        yield k, advance(with_user_positions(scenario, art.positions[k]), cfg.test_offset_ttis)


def run_comparison(cfg: ExperimentConfig, art: TrainingArtifacts, noise_variances=None) -> list[ResultRow]:
    """All schemes on the test snapshots, for each position-noise variance (m^2 per axis)."""
    variances = tuple(cfg.noise_variances if noise_variances is None else noise_variances)
    n_users = len(art.scenario.users)
    z = _rng(art.seed, _STREAM_POSITION_NOISE).standard_normal((len(art.positions), n_users, 2))
    totals = [dict.fromkeys(SCHEMES, 0.0) for _ in variances]
    for k, test in _test_scenarios(cfg, art, art.scenario):
        truth = np.array([u.position.as_array() for u in test.users])
        reported_sets = []
        for var in variances:
            rep = truth.copy()
            rep[:, :2] += math.sqrt(var) * z[k]
            reported_sets.append(rep)
        for acc, res in zip(totals, _evaluate_snapshot(cfg, art, test, k, reported_sets)):
            for s in SCHEMES:
                acc[s] += res[s]
    rows = []
    for var, acc in zip(variances, totals):
        rows.extend(_rows("compare", art.seed, var, acc, len(art.positions), cfg.phy.tti))
    return rows


def run_sweep(cfg: ExperimentConfig, art: TrainingArtifacts, axis: str, values=None) -> list[ResultRow]:
    """Perfect-position evaluation in regenerated environments, without retraining."""
    if axis == "scatterer_density":
        values = cfg.density_sweep if values is None else values
        field_name, experiment = "scatterer_density", "sweep_density"
    elif axis == "shadow_height":
        values = cfg.shadow_sweep if values is None else values
        field_name, experiment = "shadow_height", "sweep_shadow"
    else:
        raise ValueError(f"unknown sweep axis {axis!r}")
    rows = []
    for value in values:
        scenario = _scenario_for(cfg, art.seed, **{field_name: float(value)})
        totals = dict.fromkeys(SCHEMES, 0.0)
        for k, test in _test_scenarios(cfg, art, scenario):
            truth = np.array([u.position.as_array() for u in test.users])
            (res,) = _evaluate_snapshot(cfg, art, test, k, [truth])
            for s in SCHEMES:
                totals[s] += res[s]
        rows.extend(_rows(experiment, art.seed, value, totals, len(art.positions), cfg.phy.tti))
    return rows


def run_overhead_study(cfg: ExperimentConfig, comparison: list[ResultRow]) -> list[ResultRow]:
    """Effective throughput of the learned scheme (beacons) vs. the genie (CSI pilots)."""
    n_users = cfg.scenario.rrh_grid[0] * cfg.scenario.rrh_grid[1]
    oh_pos = position_overhead(cfg.frame, n_users)
    oh_csi = csi_overhead(cfg.frame, n_users)
    oh_nearby = csi_overhead(cfg.frame, n_users + cfg.frame.extra_csi_users)
    base = [r for r in comparison if r.experiment == "compare" and r.sweep_value == 0.0]
    rows = []
    for seed in sorted({r.seed for r in base}):
        by = {r.scheme: r for r in base if r.seed == seed}
        genie_rate = effective_throughput(by["genie"].sum_goodput_bits_per_tti, 0.0, cfg.phy.tti)
        for scheme, raw, oh in (
            ("learned", by["learned"].sum_goodput_bits_per_tti, oh_pos),
            ("genie", by["genie"].sum_goodput_bits_per_tti, oh_csi),
            ("genie_nearby", by["genie"].sum_goodput_bits_per_tti, oh_nearby),
        ):
            eff = effective_throughput(raw, oh, cfg.phy.tti)
            rows.append(ResultRow("overhead", seed, scheme, 0.0, raw,
                                  eff / genie_rate if genie_rate > 0 else 0.0, oh, eff))
    return rows


def sort_rows(rows) -> list[ResultRow]:
    return sorted(rows, key=lambda r: (r.experiment, r.sweep_value, r.seed, r.scheme))


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in sort_rows(rows):
        w.writerow(r.as_csv())
    return buf.getvalue()


def rows_from_csv(text: str) -> list[ResultRow]:
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader))
    if header != RESULT_COLUMNS:
        raise ValueError(f"unexpected results header {header}")
    return [ResultRow.from_csv(row) for row in reader]


def run_seed(cfg: ExperimentConfig, seed: int, parts=("compare", "sweep", "overhead")):
    art = run_training_phase(cfg, seed)
    rows = []
    if {"compare", "overhead"} & set(parts):
        comparison = run_comparison(cfg, art)
        if "compare" in parts:
            rows.extend(comparison)
        if "overhead" in parts:
            rows.extend(run_overhead_study(cfg, comparison))
    if "sweep" in parts or "sweep_density" in parts:
        rows.extend(run_sweep(cfg, art, "scatterer_density"))
    if "sweep" in parts or "sweep_shadow" in parts:
        rows.extend(run_sweep(cfg, art, "shadow_height"))
    return art, rows


def aggregate(rows):
    """Mean and sample std of relative goodput over seeds, per (experiment, sweep value, scheme)."""
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        groups.setdefault((r.experiment, r.sweep_value, r.scheme), []).append(r.relative_to_genie)
    out = {}
    for key, vals in sorted(groups.items()):
        arr = np.array(vals)
        out[key] = (float(arr.mean()), float(arr.std(ddof=1)) if len(arr) > 1 else 0.0, len(arr))
    return out


def summary_text(cfg: ExperimentConfig, artifacts, rows) -> str:
    lines = ["cransim experiment summary", ""]
    if artifacts:
        a0 = artifacts[0]
        lines.append(f"seeds: {', '.join(str(a.seed) for a in artifacts)}")
        lines.append(f"packet sizes (seed {a0.seed}): {list(a0.packet_sizes.sizes)} bits")
        lines.append(f"training rows (seed {a0.seed}): {len(a0.training_set)}")
        lines.append("")
        lines.append("forest training accuracy (mean over seeds)")
        for i, row in enumerate(a0.accuracy):
            accs = [a.accuracy[i].training_accuracy for a in artifacts]
            flag = "  (tiny dataset)" if row.tiny_data else ""
            lines.append(f"  T_n={row.n_trees:>2} T_d={row.max_depth}: {100 * np.mean(accs):6.2f}%{flag}")
        lines.append(f"  selected: T_n={cfg.forest.n_trees} T_d={cfg.forest.max_depth}")
        lines.append("")
    if rows:
        lines.append("relative goodput vs. genie: mean +/- std over seeds")
        for (exp, value, scheme), (mean, std, n) in aggregate(rows).items():
            lines.append(f"  {exp:<14} {value:>6g}  {scheme:<18} {100 * mean:6.2f}% +/- {100 * std:5.2f}  (n={n})")
    return "\n".join(lines) + "\n"
