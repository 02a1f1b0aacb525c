import dataclasses

import numpy as np
import pytest

from conftest import make_scenario
from cransim import allocator as A
from cransim.channel import ChannelModel, link_gains
from cransim.errors import ConfigError, ContractError
from cransim.forest import DecisionTree, RandomForest, TrainingSet
from cransim.phy import PhyConfig, build_codebook
from cransim.scenario import ScenarioConfig, Vec3, build_scenario, geometry
from oracles import joint_assignment_oracle

SIZES = A.PacketSizeSet((1000, 3000, 5000, 7000, 9000))


def ps_stump(threshold):
    """Tree voting success iff packet_size <= threshold."""
    return DecisionTree(np.array([6, -1, -1]), np.array([threshold, 0.0, 0.0]),
                        np.array([1, -1, -1]), np.array([2, -1, -1]), np.array([1, 1, 0]))


def record(uid, pos, capacity, beam=3, filt=1, snapshot=0):
    return A.GenieRecord(uid, Vec3(*pos), beam, filt, capacity, SIZES.labels(capacity), snapshot)


def reduced_setup(seed, users=2):
    cfg = ScenarioConfig(seed=seed, rrh_grid=(users, 1), candidate_positions=100)
    sc = build_scenario(cfg)
    tx = build_codebook("transmit", 8, 60.0, (-60.0, 60.0))  # 3 beams
    rx = build_codebook("receive", 2, 60.0, (-30.0, 30.0))  # 2 filters
    return sc, tx, rx


@pytest.mark.parametrize("seed", range(10))
def test_genie_matches_exhaustive_enumeration(seed):
    sc, tx, rx = reduced_setup(seed)
    phy, model = PhyConfig(), ChannelModel()
    (choice, caps), best_sum, n_assignments = joint_assignment_oracle(sc, phy, tx, rx, model)
    assert n_assignments == 36
    recs = A.genie_search(sc, phy, tx, rx, model)
    assert [(r.beam, r.filter) for r in recs] == list(choice)
    assert [r.capacity for r in recs] == pytest.approx(caps, rel=1e-12)


def test_genie_single_user_is_per_link_sweep():
    sc = make_scenario([(0, 0, 10, 45, 8)], [(30, 25, 1.5, 1, 2, 2, 0)])
    phy = PhyConfig()
    tx, rx = build_codebook("transmit", 8, 3.0), build_codebook("receive", 2, 12.0)
    G = link_gains(sc, phy, tx, rx)
    (r,) = A.genie_search(sc, phy, tx, rx)
    f, b = np.unravel_index(np.argmax(G[0, 0]), G[0, 0].shape)
    assert (r.beam, r.filter) == (b, f)


def test_genie_zero_channel_user():
    sc, tx, rx = reduced_setup(0)
    phy = PhyConfig()
    G = link_gains(sc, phy, tx, rx)
    G[1, 1] = 0.0
    recs = A.label_records(A.genie_search(sc, phy, tx, rx, gains=G), SIZES)
    assert recs[1].capacity == 0.0
    assert recs[1].labels == (0, 0, 0, 0, 0)


def test_best_response_close_to_exact():
    sc = build_scenario(ScenarioConfig(seed=3))
    phy = PhyConfig()
    tx, rx = build_codebook("transmit", 8, 15.0), build_codebook("receive", 2, 12.0)
    G = link_gains(sc, phy, tx, rx)
    exact = A.search_assignment(G, phy.noise, phy.symbols)
    approx = A.search_assignment(G, phy.noise, phy.symbols, exact_limit=0)
    assert approx[2].sum() <= exact[2].sum() * (1 + 1e-12)
    assert approx[2].sum() >= 0.98 * exact[2].sum()


def test_empty_codebook_rejected():
    with pytest.raises(ConfigError):
        A.search_assignment(np.zeros((2, 2, 0, 3)), 1.0, 5000)


def test_packet_sizes_from_uniform_capacities():
    caps = np.random.default_rng(0).uniform(0, 10_000, 200_000)
    sizes = A.design_packet_sizes(caps)
    assert all(s % 8 == 0 for s in sizes)
    assert np.allclose(sizes.sizes, [1000, 3000, 5000, 7000, 9000], atol=60)


def test_packet_sizes_shift_equivariance():
    caps = np.random.default_rng(1).uniform(2000, 8000, 5000)
    a = np.array(A.design_packet_sizes(caps).sizes)
    b = np.array(A.design_packet_sizes(caps + 800).sizes)
    assert np.all(np.abs(b - a - 800) <= 8)


def test_packet_sizes_degenerate():
    with pytest.raises(ConfigError):
        A.design_packet_sizes([5000.0] * 50)
    with pytest.raises(ConfigError):
        A.design_packet_sizes([5000.0] * 50 + [5001.0, 5002.0, 5003.0, 5004.0])


def test_packet_size_set_invariants():
    with pytest.raises(ConfigError):
        A.PacketSizeSet((1, 2, 3, 4))
    with pytest.raises(ConfigError):
        A.PacketSizeSet((1, 2, 2, 3, 4))
    with pytest.raises(ConfigError):
        A.PacketSizeSet((0, 2, 3, 4, 5))


def test_labels_are_strict():
    assert SIZES.labels(5000) == (1, 1, 0, 0, 0)
    assert SIZES.labels(5001) == (1, 1, 1, 0, 0)


def test_balance_undersamples_majority():
    recs = [record(0, (i, 0, 1.5), 6000.0) for i in range(100)]  # 3 ones, 2 zeros each
    ts = A.build_training_set(recs, SIZES, np.random.default_rng(0))
    assert len(ts) == 400
    assert ts.class_counts() == (200, 200)


def test_balanced_input_unchanged():
    recs = [record(0, (i, 0, 1.5), c) for i, c in enumerate([6000.0, 4000.0])]  # 3+2 ones, 2+3 zeros
    full = TrainingSet.from_vectors(A.feature_rows(recs, SIZES))
    ts = A.balance(full, np.random.default_rng(0))
    assert sorted(map(tuple, ts.features)) == sorted(map(tuple, full.features))


def test_low_capacity_record_rows():
    rows = A.feature_rows([record(0, (1, 1, 1.5), 500.0)], SIZES)
    assert [r.label for r in rows] == [0] * 5


def test_single_class_rejected():
    recs = [record(0, (i, 0, 1.5), 20_000.0) for i in range(5)]
    with pytest.raises(ConfigError):
        A.build_training_set(recs, SIZES, np.random.default_rng(0))


def test_training_set_cap_keeps_balance():
    recs = [record(0, (i, 0, 1.5), 6000.0) for i in range(100)]
    ts = A.build_training_set(recs, SIZES, np.random.default_rng(0), max_rows=100)
    assert ts.class_counts() == (50, 50)


def test_match_position_cases():
    pts = np.array([[0, 0, 0], [2, 0, 0], [5, 5, 0]], dtype=float)
    assert A.match_position(Vec3(5, 5, 0), pts) == (2, 0.0)
    assert A.match_position(Vec3(1, 0, 0), pts)[0] == 0
    with pytest.raises(ContractError):
        A.match_position(Vec3(0, 0, 0), np.zeros((0, 3)))


def test_match_position_linear_scan_oracle():
    rng = np.random.default_rng(2)
    pts = rng.uniform(0, 100, (100, 3))
    for _ in range(200):
        q = rng.uniform(-10, 110, 3)
        best, best_d = 0, float("inf")
        for i, p in enumerate(pts):
            d = sum((a - b) ** 2 for a, b in zip(p, q)) ** 0.5
            if d < best_d:
                best, best_d = i, d
        i, d = A.match_position(q, pts)
        assert i == best and d == pytest.approx(best_d)


def test_index_falls_back_to_other_users():
    index = A.TrainingIndex([record(0, (1, 1, 1.5), 6000.0), record(1, (9, 9, 1.5), 6000.0)])
    rec, fallback = index.match(7, Vec3(8, 8, 1.5))
    assert fallback and rec.user_id == 1
    rec, fallback = index.match(0, Vec3(8, 8, 1.5))
    assert not fallback and rec.user_id == 0


def test_backoff_cases():
    rng = np.random.default_rng(0)
    assert A.backoff(0, SIZES, rng) == (0, True)
    draws = [A.backoff(2, SIZES, rng)[0] for _ in range(4000)]
    assert set(draws) == {0, 1}
    assert abs(np.mean(draws) - 0.5) < 0.03
    assert A.backoff(4, SIZES, rng, mode="adjacent") == (3, False)
    a = [A.backoff(4, SIZES, np.random.default_rng(5))[0] for _ in range(3)]
    b = [A.backoff(4, SIZES, np.random.default_rng(5))[0] for _ in range(3)]
    assert a == b
    with pytest.raises(ContractError):
        A.backoff(5, SIZES, rng)


def psr_forest():
    # votes per size (1000, ..., 9000): 10, 9, 5, 2, 0
    trees = [ps_stump(8000.0)] * 2 + [ps_stump(6000.0)] * 3 + [ps_stump(4000.0)] * 4 + [ps_stump(2000.0)]
    return RandomForest(trees, 10, 1, 3)


def test_learned_picks_best_expected_goodput():
    index = A.TrainingIndex([record(0, (10, 10, 1.5), 10_000.0)])
    (d,) = A.allocate_learned(psr_forest(), [Vec3(10.2, 10, 1.5)], index, SIZES, np.random.default_rng(0))
    assert d.packet_size == 3000
    assert d.psr == 0.9
    assert d.goodput == pytest.approx(2700.0)
    assert d.forest_packet_size == 5000
    assert (d.beam, d.filter) == (3, 1)


def test_learned_single_survivor():
    rf = RandomForest([ps_stump(2000.0)] * 4, 4, 1, 3)
    index = A.TrainingIndex([record(0, (0, 0, 1.5), 10_000.0)])
    (d,) = A.allocate_learned(rf, [Vec3(0, 0, 1.5)], index, SIZES, np.random.default_rng(0))
    assert (d.packet_size, d.psr) == (1000, 1.0)


def test_learned_all_negative_is_conservative():
    rf = RandomForest([ps_stump(2000.0)] * 3 + [ps_stump(0.0)] * 7, 10, 1, 3)
    index = A.TrainingIndex([record(0, (0, 0, 1.5), 10_000.0)])
    (d,) = A.allocate_learned(rf, [Vec3(0, 0, 1.5)], index, SIZES, np.random.default_rng(0))
    assert d.packet_size == 1000 and d.psr == 0.3
    assert "conservative" in d.flags


def test_learned_false_positive_backs_off():
    # The forest believes every size works; the stored record only supports PS1 and PS2.
    rf = RandomForest([ps_stump(1e9)] * 10, 10, 1, 3)
    index = A.TrainingIndex([record(0, (0, 0, 1.5), 4000.0)])
    (d,) = A.allocate_learned(rf, [Vec3(0, 0, 1.5)], index, SIZES, np.random.default_rng(0))
    assert d.flags.count("backoff") == 3  # PS3, PS4 and PS5 are false positives
    assert d.forest_packet_size == 9000
    assert d.packet_size < 9000
    # adjacent back-off maps each false positive to the next size down, so PS5 becomes PS4
    (d,) = A.allocate_learned(rf, [Vec3(0, 0, 1.5)], index, SIZES, np.random.default_rng(0),
                              backoff_mode="adjacent")
    assert d.packet_size == 7000 and d.psr == 1.0


def test_random_baseline_expectations():
    rng = np.random.default_rng(0)
    for capacity, expected in [(20_000.0, np.mean(SIZES.sizes)), (0.0, 0.0), (4000.0, (1000 + 3000) / 5)]:
        rec = record(0, (0, 0, 1.5), capacity)
        goodput = [A.allocate_random([rec], SIZES, rng)[0].goodput for _ in range(20_000)]
        assert np.mean(goodput) == pytest.approx(expected, abs=0.02 * np.mean(SIZES.sizes))


@pytest.mark.parametrize("capacity,ps,goodput", [(5001.0, 5000, 5000.0), (900.0, 1000, 0.0), (1e5, 9000, 9000.0)])
def test_genie_allocation(capacity, ps, goodput):
    (d,) = A.allocate_genie([record(0, (0, 0, 1.5), capacity)], SIZES)
    assert (d.packet_size, d.goodput) == (ps, goodput)


def test_geometric_assignment_follows_angles():
    sc = build_scenario(ScenarioConfig(seed=2))
    tx, rx = build_codebook("transmit", 8, 3.0), build_codebook("receive", 2, 12.0)
    beams, filters = A.geometric_assignment(sc, tx, rx)
    for u, b, f in zip(sc.users, beams, filters):
        g = geometry(sc, u.serving_rrh, u.id)
        assert abs(tx.angle_of(b) - np.clip(g.azimuth_aod_deg, -60, 60)) <= 1.5
        assert abs(rx.angle_of(f) - np.clip(g.azimuth_aoa_deg, -60, 60)) <= 6.0


def test_realized_goodput_uses_true_capacity():
    sc, tx, rx = reduced_setup(1)
    phy = PhyConfig()
    G = link_gains(sc, phy, tx, rx)
    recs = A.genie_search(sc, phy, tx, rx, gains=G)
    sizes = A.PacketSizeSet(tuple(int(min(r.capacity for r in recs) * f) for f in (0.2, 0.4, 0.6, 0.8, 0.99)))
    decisions = A.allocate_genie(recs, sizes)
    assert A.realized_goodput(decisions, G, phy).tolist() == [d.goodput for d in decisions]


def test_record_and_training_set_files(tmp_path):
    recs = [record(u, (u + 0.1, 2.2, 1.5), 1000.0 * (u + 3), snapshot=u) for u in range(4)]
    A.write_records(tmp_path / "r.csv", recs)
    assert A.read_records(tmp_path / "r.csv") == recs
    ts = TrainingSet.from_vectors(A.feature_rows(recs, SIZES))
    A.write_training_set(tmp_path / "t.csv", ts)
    back = A.read_training_set(tmp_path / "t.csv")
    assert np.array_equal(back.features, ts.features) and np.array_equal(back.labels, ts.labels)


def test_decision_is_frozen():
    (d,) = A.allocate_genie([record(0, (0, 0, 1.5), 6000.0)], SIZES)
    with pytest.raises(dataclasses.FrozenInstanceError):
        d.packet_size = 1
