"""Learning-based resource allocation and its CSI-based / random baselines.

Schemes decide, per user, a transmit beam, a receive filter and a packet
size. The genie searches beams and filters on full CSI; the learned scheme
only sees reported positions, looks up the nearest training position, and
lets the forest's votes pick the packet size.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from cransim import forest as rf_mod
from cransim.channel import ChannelModel, link_gains
from cransim.errors import ConfigError, ContractError
from cransim.forest import FeatureVector, TrainingSet
from cransim.phy import Codebook, PhyConfig, transport_capacity
from cransim.scenario import Scenario, Vec3, geometry

NUM_PACKET_SIZES = 5
DEFAULT_QUANTILES = (0.1, 0.3, 0.5, 0.7, 0.9)


@dataclass(frozen=True)
class PacketSizeSet:
    sizes: tuple[int, ...]

    def __post_init__(self):
        s = tuple(int(v) for v in self.sizes)
        object.__setattr__(self, "sizes", s)
        if len(s) != NUM_PACKET_SIZES:
            raise ConfigError(f"need exactly {NUM_PACKET_SIZES} packet sizes, got {len(s)}", "packet_sizes")
        if s[0] <= 0 or any(a >= b for a, b in zip(s, s[1:])):
            raise ConfigError(f"packet sizes must be positive and strictly increasing: {s}", "packet_sizes")

    def __len__(self):
        return len(self.sizes)

    def __getitem__(self, i):
        return self.sizes[i]

    def __iter__(self):
        return iter(self.sizes)

    def labels(self, capacity: float) -> tuple[int, ...]:
        return tuple(int(ps < capacity) for ps in self.sizes)


@dataclass(frozen=True)
class GenieRecord:
    user_id: int
    position: Vec3
    beam: int
    filter: int
    capacity: float
    labels: tuple[int, ...] = ()
    snapshot: int = 0


@dataclass(frozen=True)
class AllocationDecision:
    user_id: int
    beam: int
    filter: int
    packet_size: int
    psr: float
    goodput: float
    scheme: str
    flags: tuple[str, ...] = ()
    # Largest size the forest predicted as a success, before any back-off.
    forest_packet_size: int | None = None


def _decision(user_id, beam, filt, ps, psr, scheme, flags=(), forest_ps=None):
    return AllocationDecision(int(user_id), int(beam), int(filt), int(ps), float(psr),
                              float(psr) * int(ps), scheme, tuple(flags), forest_ps)


# ---------------------------------------------------------------------------
# Beam/filter search on a gain tensor
# ---------------------------------------------------------------------------


def capacities_for_beams(G, beams, noise: float, symbols: float):
    """Per-user capacity with each user's receive filter chosen optimally.

    ``beams`` is (K, N): K candidate joint beam choices for N users. Returns
    ``(capacity, filters)``, both (K, N).
    """
    T = np.atleast_2d(np.asarray(beams, dtype=np.int64))
    K, N = T.shape
    caps = np.empty((K, N))
    filt = np.empty((K, N), dtype=np.int64)
    users = np.arange(N)
    for n in range(N):
        P = G[n][users[None, :], :, T]  # (K, N, F): power from each user's RRH through each filter
        sig = P[:, n, :]
        others = np.delete(P, n, axis=1).sum(axis=1)
        c = transport_capacity(sig / (noise + others), symbols)
        filt[:, n] = np.argmax(c, axis=1)
        caps[:, n] = c[np.arange(K), filt[:, n]]
    return caps, filt


def assignment_capacities(G, beams, filters, noise: float, symbols: float) -> np.ndarray:
    """Per-user capacity for a fixed beam and filter per user."""
    beams = np.asarray(beams, dtype=np.int64)
    filters = np.asarray(filters, dtype=np.int64)
    N = len(beams)
    caps = np.empty(N)
    for n in range(N):
        p = G[n, np.arange(N), filters[n], beams]
        caps[n] = transport_capacity(p[n] / (noise + np.delete(p, n).sum()), symbols)
    return caps


def _exact_search(G, noise, symbols, chunk=65536):
    N, B = G.shape[0], G.shape[3]
    total = B**N
    best_val, best = -np.inf, None
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        T = np.stack(np.unravel_index(idx, (B,) * N), axis=1)
        caps, filt = capacities_for_beams(G, T, noise, symbols)
        s = caps.sum(axis=1)
        k = int(np.argmax(s))
        if s[k] > best_val:
            best_val, best = s[k], (T[k], filt[k], caps[k])
    return best


def _best_response(G, noise, symbols, beams, max_rounds=50):
    N, B = G.shape[0], G.shape[3]
    beams = np.array(beams, dtype=np.int64)
    caps, filt = capacities_for_beams(G, beams[None, :], noise, symbols)
    value = caps.sum()
    for _ in range(max_rounds):
        improved = False
        for n in range(N):
            T = np.repeat(beams[None, :], B, axis=0)
            T[:, n] = np.arange(B)
            c, _ = capacities_for_beams(G, T, noise, symbols)
            s = c.sum(axis=1)
            k = int(np.argmax(s))
            if s[k] > value * (1 + 1e-12) and k != beams[n]:
                beams[n] = k
                value = s[k]
                improved = True
        if not improved:
            break
    caps, filt = capacities_for_beams(G, beams[None, :], noise, symbols)
    return beams, filt[0], caps[0]


def search_assignment(G, noise: float, symbols: float, exact_limit: int = 200_000,
                      restarts: int = 3, seed: int = 0):
    """Beams and filters maximizing the sum transport capacity.

    Exhaustive over all joint beam choices when there are at most
    ``exact_limit`` of them (filters are optimized per user given the beams,
    which is exact because a filter only affects its own user). Larger
    instances use best-response sweeps from the interference-free per-link
    optimum plus ``restarts`` random starting points.

    Returns ``(beams, filters, capacities)``, one entry per user.
    """
    G = np.asarray(G, dtype=float)
    N, _, F, B = G.shape
    if F == 0 or B == 0:
        raise ConfigError("empty codebook", "codebook")
    if B**N <= exact_limit:
        return _exact_search(G, noise, symbols)
    own = np.stack([G[n, n] for n in range(N)])  # (N, F, B)
    start = np.array([np.unravel_index(np.argmax(own[n]), (F, B))[1] for n in range(N)])
    best = _best_response(G, noise, symbols, start)
    rng = np.random.default_rng(seed)
    for _ in range(restarts):
        cand = _best_response(G, noise, symbols, rng.integers(0, B, size=N))
        if cand[2].sum() > best[2].sum() * (1 + 1e-12):
            best = cand
    return best


def genie_search(scenario: Scenario, phy: PhyConfig, tx_codebook: Codebook, rx_codebook: Codebook,
                 model: ChannelModel = ChannelModel(), snapshot: int = 0, gains=None,
                 exact_limit: int = 200_000) -> list[GenieRecord]:
    """Sum-capacity-optimal beam/filter per user with full CSI (labels left empty)."""
    if len(tx_codebook) == 0 or len(rx_codebook) == 0:
        raise ConfigError("empty codebook", "codebook")
    G = link_gains(scenario, phy, tx_codebook, rx_codebook, model) if gains is None else gains
    beams, filters, caps = search_assignment(G, phy.noise, phy.symbols, exact_limit)
    return [
        GenieRecord(u.id, u.position, int(b), int(f), float(c), (), snapshot)
        for u, b, f, c in zip(scenario.users, beams, filters, caps)
    ]


# ---------------------------------------------------------------------------
# Pre-processing: packet sizes and the training set
# ---------------------------------------------------------------------------


def design_packet_sizes(capacities, quantiles=DEFAULT_QUANTILES, align: int = 8) -> PacketSizeSet:
    """Packet sizes at fixed quantiles of the pooled optimal capacities, ``align``-bit aligned."""
    c = np.asarray(list(capacities), dtype=float)
    if len(np.unique(c[c > 0])) < NUM_PACKET_SIZES:
        raise ConfigError(
            f"need at least {NUM_PACKET_SIZES} distinct positive capacities, got {len(np.unique(c[c > 0]))}",
            "capacities",
        )
    q = np.floor(np.quantile(c, quantiles) / align) * align
    if len(np.unique(q)) < len(q) or q[0] <= 0:
        raise ConfigError(f"degenerate capacity distribution, quantiles {q.tolist()}", "capacities")
    sizes = [int(v) for v in q]
    return PacketSizeSet(tuple(sizes))


def label_records(records, packet_sizes: PacketSizeSet) -> list[GenieRecord]:
    return [
        GenieRecord(r.user_id, r.position, r.beam, r.filter, r.capacity,
                    packet_sizes.labels(r.capacity), r.snapshot)
        for r in records
    ]


def feature_rows(records, packet_sizes: PacketSizeSet) -> list[FeatureVector]:
    rows = []
    for r in records:
        labels = r.labels or packet_sizes.labels(r.capacity)
        for ps, y in zip(packet_sizes, labels):
            rows.append(FeatureVector(r.user_id, r.position, r.beam, r.filter, ps, y))
    return rows


def balance(ts: TrainingSet, rng: np.random.Generator) -> TrainingSet:
    """Undersample the majority class uniformly at random until the classes differ by <= 1."""
    zeros = np.flatnonzero(ts.labels == 0)
    ones = np.flatnonzero(ts.labels == 1)
    if not len(zeros) or not len(ones):
        raise ConfigError(
            f"training labels contain a single class ({len(zeros)} zeros, {len(ones)} ones); "
            "packet sizes do not straddle the optimal capacities",
            "packet_sizes",
        )
    small, large = (zeros, ones) if len(zeros) <= len(ones) else (ones, zeros)
    keep = np.sort(np.concatenate([small, rng.choice(large, size=len(small), replace=False)]))
    return TrainingSet(ts.features[keep], ts.labels[keep])


def build_training_set(records, packet_sizes: PacketSizeSet, rng: np.random.Generator,
                       max_rows: int | None = None) -> TrainingSet:
    records = list(records)
    if not records:
        raise ContractError("no genie records")
    ts = balance(TrainingSet.from_vectors(feature_rows(records, packet_sizes)), rng)
    if max_rows is not None and len(ts) > max_rows:
        # Keep the classes balanced while trimming.
        zeros = np.flatnonzero(ts.labels == 0)
        ones = np.flatnonzero(ts.labels == 1)
        half = max_rows // 2
        keep = np.sort(np.concatenate([rng.choice(zeros, half, replace=False),
                                       rng.choice(ones, half, replace=False)]))
        ts = TrainingSet(ts.features[keep], ts.labels[keep])
    return ts


# ---------------------------------------------------------------------------
# Machine-learning unit and scheduler
# ---------------------------------------------------------------------------


def match_position(reported, positions) -> tuple[int, float]:
    """Index of (and distance to) the stored position nearest ``reported``.

    Ties go to the lowest index.
    """
    P = np.asarray(positions, dtype=float).reshape(-1, 3)
    if not len(P):
        raise ContractError("no stored positions to match against")
    q = reported.as_array() if isinstance(reported, Vec3) else np.asarray(reported, dtype=float)
    d = np.sqrt(((P - q) ** 2).sum(axis=1))
    i = int(np.argmin(d))
    return i, float(d[i])


class TrainingIndex:
    """Training-time genie records, searchable by user and position."""

    def __init__(self, records):
        self.records = list(records)
        if not self.records:
            raise ContractError("empty training index")
        self._all = np.array([r.position.as_array() for r in self.records])
        self._by_user: dict[int, tuple[np.ndarray, list[GenieRecord]]] = {}
        for uid in sorted({r.user_id for r in self.records}):
            recs = [r for r in self.records if r.user_id == uid]
            self._by_user[uid] = (np.array([r.position.as_array() for r in recs]), recs)

    def match(self, user_id: int, reported) -> tuple[GenieRecord, bool]:
        """Nearest record of ``user_id``; falls back to all users (flag True) if it has none."""
        if user_id in self._by_user:
            positions, recs = self._by_user[user_id]
            return recs[match_position(reported, positions)[0]], False
        return self.records[match_position(reported, self._all)[0]], True


def backoff(fp_index: int, packet_sizes: PacketSizeSet, rng: np.random.Generator,
            mode: str = "uniform") -> tuple[int, bool]:
    """Fallback size index after a false positive at ``fp_index`` (0-based).

    ``mode="uniform"`` draws uniformly from every strictly smaller size;
    ``mode="adjacent"`` always takes the next smaller one. A false positive
    at the smallest size keeps it and returns ``flagged=True``.
    """
    if not 0 <= fp_index < len(packet_sizes):
        raise ContractError(f"packet size index {fp_index} out of range")
    if fp_index == 0:
        return 0, True
    if mode == "uniform":
        return int(rng.integers(0, fp_index)), False
    if mode == "adjacent":
        return fp_index - 1, False
    raise ConfigError(f"unknown back-off mode {mode!r}", "backoff")


def allocate_learned(forest, reported_positions, index: TrainingIndex, packet_sizes: PacketSizeSet,
                     rng: np.random.Generator, user_ids=None, backoff_mode: str = "uniform"):
    """Forest-driven packet size choice on the beams stored for the nearest training position.

    ``reported_positions`` holds one Vec3 (or xyz row) per user, paired with
    ``user_ids`` (default 0..N-1).
    """
    reported_positions = list(reported_positions)
    if user_ids is None:
        user_ids = range(len(reported_positions))
    sizes = np.array(packet_sizes.sizes)
    decisions = []
    for uid, reported in zip(user_ids, reported_positions):
        rec, fallback = index.match(uid, reported)
        flags = ["global_match"] if fallback else []
        X = np.array([
            FeatureVector(uid, rec.position, rec.beam, rec.filter, ps).as_array() for ps in sizes
        ])
        v = rf_mod.votes(forest, X)
        psr = v / forest.n_trees
        predicted = 2 * v >= forest.n_trees
        labels = rec.labels or packet_sizes.labels(rec.capacity)

        candidates = []
        for p in np.flatnonzero(predicted):
            if labels[p]:
                candidates.append(int(p))
            else:
                r, at_floor = backoff(int(p), packet_sizes, rng, backoff_mode)
                candidates.append(r)
                flags.append("floor_backoff" if at_floor else "backoff")
        if candidates:
            forest_ps = int(sizes[np.flatnonzero(predicted)[-1]])
            score = [psr[c] * sizes[c] for c in candidates]
            best = candidates[int(np.argmax(score))]
        else:
            forest_ps = int(sizes[0])
            best = 0
            flags.append("conservative")
        decisions.append(_decision(uid, rec.beam, rec.filter, sizes[best], psr[best], "learned",
                                   flags, forest_ps))
    return decisions


def allocate_random(records, packet_sizes: PacketSizeSet, rng: np.random.Generator):
    """Genie beams and filters with a uniformly random packet size (baseline)."""
    out = []
    for r in records:
        ps = packet_sizes[int(rng.integers(len(packet_sizes)))]
        out.append(_decision(r.user_id, r.beam, r.filter, ps, float(ps < r.capacity), "random"))
    return out


def geometric_assignment(scenario: Scenario, tx_codebook: Codebook, rx_codebook: Codebook):
    """Beam nearest the true AoD and filter nearest the true AoA, per user."""
    beams, filters = [], []
    for u in scenario.users:
        g = geometry(scenario, u.serving_rrh, u.id)
        beams.append(tx_codebook.index_of(g.azimuth_aod_deg))
        filters.append(rx_codebook.index_of(g.azimuth_aoa_deg))
    return beams, filters


def allocate_geometric(scenario: Scenario, packet_sizes: PacketSizeSet, rng: np.random.Generator,
                       tx_codebook: Codebook, rx_codebook: Codebook, gains, phy: PhyConfig):
    """Location-based beams and filters with a uniformly random packet size (baseline).

    ``gains`` is the true link-gain tensor used to score the outcome.
    """
    beams, filters = geometric_assignment(scenario, tx_codebook, rx_codebook)
    caps = assignment_capacities(gains, beams, filters, phy.noise, phy.symbols)
    out = []
    for u, b, f, c in zip(scenario.users, beams, filters, caps):
        ps = packet_sizes[int(rng.integers(len(packet_sizes)))]
        out.append(_decision(u.id, b, f, ps, float(ps < c), "geometric"))
    return out


def allocate_genie(records, packet_sizes: PacketSizeSet):
    """Largest packet size below each user's optimal capacity (upper bound)."""
    out = []
    for r in records:
        fits = [i for i, ps in enumerate(packet_sizes) if ps < r.capacity]
        if fits:
            out.append(_decision(r.user_id, r.beam, r.filter, packet_sizes[fits[-1]], 1.0, "genie"))
        else:
            out.append(_decision(r.user_id, r.beam, r.filter, packet_sizes[0], 0.0, "genie", ("idle",)))
    return out


def realized_goodput(decisions, gains, phy: PhyConfig) -> np.ndarray:
    """Bits delivered per user when all decisions are transmitted on the true channel."""
    beams = [d.beam for d in decisions]
    filters = [d.filter for d in decisions]
    caps = assignment_capacities(gains, beams, filters, phy.noise, phy.symbols)
    return np.array([d.packet_size if d.packet_size < c else 0 for d, c in zip(decisions, caps)],
                    dtype=float)


# ---------------------------------------------------------------------------
# Columnar text I/O
# ---------------------------------------------------------------------------

RECORD_COLUMNS = ("snapshot", "user_id", "x", "y", "z", "beam", "filter", "capacity",
                  *(f"y{i + 1}" for i in range(NUM_PACKET_SIZES)))
TRAINING_COLUMNS = (*rf_mod.FEATURES, "label")


def write_records(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_COLUMNS)
        for r in records:
            labels = list(r.labels) + [""] * (NUM_PACKET_SIZES - len(r.labels))
            w.writerow([r.snapshot, r.user_id, repr(float(r.position.x)), repr(float(r.position.y)), repr(float(r.position.z)),
                        r.beam, r.filter, repr(float(r.capacity)), *labels])


def read_records(path) -> list[GenieRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RECORD_COLUMNS:
            raise ValueError(f"unexpected genie record header {reader.fieldnames}")
        for row in reader:
            labels = tuple(int(row[f"y{i + 1}"]) for i in range(NUM_PACKET_SIZES) if row[f"y{i + 1}"] != "")
            out.append(GenieRecord(
                int(row["user_id"]), Vec3(float(row["x"]), float(row["y"]), float(row["z"])),
                int(row["beam"]), int(row["filter"]), float(row["capacity"]), labels, int(row["snapshot"]),
            ))
    return out


def write_training_set(path, ts: TrainingSet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAINING_COLUMNS)
        for f, y in zip(ts.features, ts.labels):
            w.writerow([*(repr(float(v)) for v in f), int(y)])


def read_training_set(path) -> TrainingSet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != TRAINING_COLUMNS:
            raise ValueError(f"unexpected training set header {header}")
        rows = [[float(v) for v in row] for row in reader]
    arr = np.array(rows).reshape(-1, len(TRAINING_COLUMNS))
    return TrainingSet(arr[:, :-1], arr[:, -1].astype(np.int64))
