import math

import numpy as np
import pytest

from conftest import make_scenario
from cransim.channel import (
    ChannelModel,
    PathlossModel,
    channel_matrix,
    link_gains,
    pathloss_gain,
    read_channel_dump,
    shadow_penalty,
    write_channel_dump,
)
from cransim.errors import ContractError
from cransim.phy import PhyConfig, build_codebook, received_power
from cransim.scenario import ScattererField, ScenarioConfig, ShadowObject, build_scenario

NO_SCATTER = ChannelModel(include_scatterers=False)


def test_pathloss_reference_distance():
    lam = PathlossModel().wavelength
    assert pathloss_gain(lam / (4 * math.pi)) == pytest.approx(1.0)


def test_pathloss_inverse_distance():
    assert pathloss_gain(20.0) == pytest.approx(pathloss_gain(10.0) / 2)


def test_friis_at_50m():
    c, f = 299_792_458.0, 3.5e9
    expected_db = 20 * math.log10(c / f / (4 * math.pi * 50))
    got_db = 20 * math.log10(pathloss_gain(50.0))
    assert got_db == pytest.approx(expected_db, abs=1e-9)
    assert got_db == pytest.approx(-77.3, abs=0.2)


@pytest.mark.parametrize("d", [0.0, -3.0])
def test_pathloss_domain(d):
    with pytest.raises(ContractError):
        pathloss_gain(d)


def test_shadow_penalty_law():
    assert shadow_penalty(False, 3.0) == 1.0
    assert shadow_penalty(True, 1.5) == pytest.approx(0.3162, abs=1e-4)
    assert shadow_penalty(True, 5.0) == pytest.approx(0.1413, abs=1e-4)
    assert shadow_penalty(True, 100.0) == pytest.approx(10 ** (-30 / 20))


def test_single_antenna_los_has_unit_amplitude():
    sc = make_scenario([(0, 0, 10, 0, 1)], [(30, 5, 1.5, 0, 0, 1, 0)])
    H = channel_matrix(sc, 0, 0, model=NO_SCATTER)
    assert H.shape == (1, 1)
    assert abs(H.entries[0, 0]) == pytest.approx(1.0)


def test_los_only_channel_is_rank_one():
    sc = make_scenario([(0, 0, 10, 45, 8)], [(30, 20, 1.5, 3, 4, 2, 0)])
    H = channel_matrix(sc, 0, 0, model=NO_SCATTER).entries
    assert H.shape == (2, 8)
    assert np.linalg.matrix_rank(H) == 1


def test_scattered_ray_amplitude():
    # LOS length 2 m, scatterer gain 0.5 on a 4 m detour -> 0.5 * 2 / 4 = 0.25.
    pts = np.array([[1.0, math.sqrt(3.0), 0.0]])
    field = ScattererField(1.0, (0, 0, 10, 10), pts, np.array([0.5]))
    sc = make_scenario([(0, 0, 0, 0, 1)], [(2, 0, 0, 0, 0, 1, 0)], scatterers=field)
    H = channel_matrix(sc, 0, 0, model=ChannelModel(include_los=False)).entries
    assert abs(H[0, 0]) == pytest.approx(0.25)


def test_blocked_los_is_attenuated():
    wall = ShadowObject((20, -5), (20, 5), 5.0)  # ray is at 4.33 m there
    clear = make_scenario([(0, 0, 10, 0, 1)], [(30, 0, 1.5, 0, 0, 1, 0)])
    blocked = make_scenario([(0, 0, 10, 0, 1)], [(30, 0, 1.5, 0, 0, 1, 0)], shadows=[wall])
    a = abs(channel_matrix(clear, 0, 0, model=NO_SCATTER).entries[0, 0])
    b = abs(channel_matrix(blocked, 0, 0, model=NO_SCATTER).entries[0, 0])
    assert b / a == pytest.approx(shadow_penalty(True, 5.0))


def test_outage_when_nothing_propagates():
    sc = make_scenario([(0, 0, 10, 0, 8)], [(30, 0, 1.5, 0, 0, 2, 0)])
    H = channel_matrix(sc, 0, 0, model=ChannelModel(include_los=False))
    assert H.outage and not np.any(H.entries)


def test_dimensions_and_determinism_on_default_scenario():
    sc = build_scenario(ScenarioConfig(seed=4))
    for r in sc.rrhs:
        for u in sc.users:
            a = channel_matrix(sc, r.id, u.id, tti_index=3)
            b = channel_matrix(sc, r.id, u.id, tti_index=3)
            assert a.shape == (2, 8)
            assert np.array_equal(a.entries, b.entries)


def test_los_dominates_scattered_rays():
    sc = build_scenario(ScenarioConfig(seed=5, num_shadows=0))
    for u in sc.users:
        r = sc.rrh(u.serving_rrh)
        d_los = np.linalg.norm(u.position.as_array() - r.position.as_array())
        path = (np.linalg.norm(sc.scatterers.points - r.position.as_array(), axis=1)
                + np.linalg.norm(sc.scatterers.points - u.position.as_array(), axis=1))
        assert np.all(sc.scatterers.gains * d_los / path < 1.0)


def test_small_position_change_is_continuous():
    sc = build_scenario(ScenarioConfig(seed=6))
    nudged = make_scenario(
        [(r.position.x, r.position.y, r.position.z, r.boresight_azimuth, r.num_antennas) for r in sc.rrhs],
        [(u.position.x + 1e-5, u.position.y, u.position.z, u.velocity.x, u.velocity.y, u.num_antennas,
          u.serving_rrh) for u in sc.users],
        shadows=sc.shadows, scatterers=sc.scatterers,
    )
    for u in sc.users:
        a = np.abs(channel_matrix(sc, u.serving_rrh, u.id).entries)
        b = np.abs(channel_matrix(nudged, u.serving_rrh, u.id).entries)
        assert np.max(np.abs(a - b)) < 1e-3


def test_link_gains_match_received_power():
    sc = build_scenario(ScenarioConfig(seed=8))
    phy = PhyConfig()
    tx = build_codebook("transmit", 8, 30.0)
    rx = build_codebook("receive", 2, 60.0)
    G = link_gains(sc, phy, tx, rx)
    assert G.shape == (4, 4, len(rx), len(tx))
    for n, victim in enumerate(sc.users):
        for m, other in enumerate(sc.users):
            H = channel_matrix(sc, other.serving_rrh, victim.id)
            h = pathloss_gain(H.distance_m)
            for f in range(len(rx)):
                for b in range(len(tx)):
                    want = received_power(H, rx.vectors[f], tx.vectors[b], h, phy.p_tx)
                    assert G[n, m, f, b] == pytest.approx(want, rel=1e-10)


def test_channel_dump_round_trip(tmp_path):
    sc = build_scenario(ScenarioConfig(seed=9))
    mats = [channel_matrix(sc, r.id, u.id, 2) for r in sc.rrhs for u in sc.users]
    path = tmp_path / "h.csv"
    write_channel_dump(path, mats)
    back = read_channel_dump(path)
    for m in mats:
        assert np.array_equal(back[(m.rrh, m.user, 2)], m.entries)
