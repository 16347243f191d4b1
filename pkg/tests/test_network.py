import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nomarl.network import (
    AssociationState,
    ClusterSnapshot,
    ConfigError,
    NetworkConfig,
    UserTerminal,
    Violation,
    cluster_sinrs,
    controlled_powers,
    inter_cell_interference,
    instantaneous_sum_rate,
    noise_power,
    sample_active_users,
    sic_decode,
    sum_rate_arrays,
    thermal_noise_w,
    validate,
)

from oracle import _evaluate


def _state(assignment, config):
    return AssociationState.from_assignment(assignment, config)


class TestConfig:
    def test_subchannel_bandwidth_is_exact_split(self):
        cfg = NetworkConfig(total_bandwidth_hz=60e3, n_subchannels=2)
        assert cfg.subchannel_bandwidth_hz == 30e3

    @pytest.mark.parametrize(
        "kwargs",
        [dict(n_bs=0), dict(n_subchannels=0), dict(total_bandwidth_hz=0), dict(gain_levels=(0.0,)),
         dict(power_levels_dbm=())],
    )
    def test_invalid_configs_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            NetworkConfig(**kwargs)

    def test_sinr_threshold_matches_rate_threshold(self):
        cfg = NetworkConfig()
        assert cfg.subchannel_bandwidth_hz * math.log2(1 + cfg.sinr_threshold) == pytest.approx(10e3)


class TestNoise:
    def test_zero_bandwidth(self):
        assert thermal_noise_w(0.0) == 0.0

    def test_60khz(self):
        assert noise_power(NetworkConfig(total_bandwidth_hz=60e3)) == pytest.approx(2.485e-16, rel=1e-3)
        assert noise_power(NetworkConfig()) == 1.380649e-23 * 300 * 6.0e4

    def test_120khz(self):
        assert noise_power(NetworkConfig(total_bandwidth_hz=120e3)) == pytest.approx(4.970e-16, rel=1e-3)


class TestInterCell:
    def test_single_bs_is_zero(self):
        cfg = NetworkConfig(n_bs=1)
        users = [UserTerminal(0, 1e-5, 0.01), UserTerminal(1, 2e-5, 0.01)]
        st_ = _state({0: (0, 0), 1: (0, 0)}, cfg)
        assert inter_cell_interference(0, 0, st_, users) == 0.0

    def test_one_co_channel_user(self):
        cfg = NetworkConfig()
        users = [UserTerminal(0, 2e-5, 0.01), UserTerminal(1, 1e-5, 0.01)]
        st_ = _state({0: (0, 0), 1: (1, 0)}, cfg)
        assert inter_cell_interference(0, 0, st_, users) == pytest.approx(1e-7)

    def test_other_subchannel_only(self):
        cfg = NetworkConfig()
        users = [UserTerminal(0, 2e-5, 0.01), UserTerminal(1, 1e-5, 0.01)]
        st_ = _state({0: (0, 0), 1: (1, 1)}, cfg)
        assert inter_cell_interference(0, 0, st_, users) == 0.0


class TestSinr:
    def test_single_member(self):
        c = ClusterSnapshot.build(0, 0, [UserTerminal(0, 1e-5, 0.01)])
        [(uid, s)] = cluster_sinrs(c, 0.0, 2.485e-16)
        assert uid == 0
        assert s == pytest.approx(4.024e8, rel=1e-3)

    def test_two_members(self):
        c = ClusterSnapshot.build(0, 0, [UserTerminal(2, 2e-5, 0.01), UserTerminal(1, 1e-5, 0.01)])
        sinrs = dict(cluster_sinrs(c, 0.0, 2.485e-16))
        assert sinrs[2] == pytest.approx(2.0, rel=1e-6)
        assert sinrs[1] == pytest.approx(4.024e8, rel=1e-3)

    def test_zero_power_member(self):
        c = ClusterSnapshot.build(0, 0, [UserTerminal(0, 1e-5, 0.0), UserTerminal(1, 2e-5, 0.01)])
        sinrs = dict(cluster_sinrs(c, 0.0, 1e-16))
        assert sinrs[0] == 0.0
        assert sinrs[1] == pytest.approx(1e-7 * 2 / 1e-16)

    def test_members_sorted_with_id_tiebreak(self):
        c = ClusterSnapshot.build(0, 0, [UserTerminal(5, 1e-5, 1), UserTerminal(3, 1e-5, 1), UserTerminal(1, 2e-5, 1)])
        assert [m[0] for m in c.members] == [3, 5, 1]

    @given(st.floats(1e-12, 1e-3), st.floats(1e-12, 1e-3))
    def test_more_interference_lowers_every_sinr(self, a, b):
        lo, hi = sorted((a, b))
        if lo == hi:
            return
        c = ClusterSnapshot.build(0, 0, [UserTerminal(0, 1e-5, 0.1), UserTerminal(1, 2e-5, 0.5)])
        for (_, s_lo), (_, s_hi) in zip(cluster_sinrs(c, lo, 1e-16), cluster_sinrs(c, hi, 1e-16)):
            assert s_hi < s_lo


class TestSic:
    CFG = NetworkConfig(total_bandwidth_hz=60e3, sic_rate_threshold_bps=10e3)

    def test_both_decode(self):
        c = ClusterSnapshot.build(0, 0, [UserTerminal(1, 1e-5, 0.01), UserTerminal(2, 2e-5, 0.01)])
        rep = sic_decode(c, [(1, 4.024e8), (2, 2.0)], self.CFG)
        assert rep.per_user_rate_bps[2] == pytest.approx(30000 * math.log2(3))
        assert rep.per_user_rate_bps[2] == pytest.approx(47548, abs=1)
        assert rep.per_user_rate_bps[1] == pytest.approx(30000 * math.log2(1 + 4.024e8))
        assert not rep.decode_failures

    def test_failure_cascades_to_weaker(self):
        c = ClusterSnapshot.build(0, 0, [UserTerminal(1, 1e-5, 0.01), UserTerminal(2, 2e-5, 0.01)])
        rep = sic_decode(c, [(1, 4.024e8), (2, 0.1)], self.CFG)
        assert rep.per_user_rate_bps[2] == pytest.approx(30000 * math.log2(1.1))
        assert rep.per_user_rate_bps[1] == 0.0
        assert rep.decode_failures == {1}
        assert rep.sum_rate_bps == pytest.approx(rep.per_user_rate_bps[2])

    def test_empty(self):
        rep = sic_decode(ClusterSnapshot(0, 0, ()), [], self.CFG)
        assert rep.per_user_rate_bps == {} and rep.sum_rate_bps == 0.0

    @given(st.lists(st.floats(0.0, 5.0), min_size=1, max_size=6))
    def test_failures_are_suffix_closed(self, sinrs):
        members = tuple((k, 1e-5 * (k + 1), 0.01) for k in range(len(sinrs)))
        rep = sic_decode(ClusterSnapshot(0, 0, members), list(enumerate(sinrs)), self.CFG)
        order = list(range(len(sinrs)))[::-1]  # decoding order, strongest first
        failed = [k in rep.decode_failures for k in order]
        if True in failed:
            first = failed.index(True)
            assert all(failed[first:])
        for k in rep.decode_failures:
            assert rep.per_user_rate_bps[k] == 0.0
        assert rep.sum_rate_bps == pytest.approx(sum(rep.per_user_rate_bps.values()))

    def test_rates_scale_with_bandwidth(self):
        c = ClusterSnapshot.build(0, 0, [UserTerminal(1, 1e-5, 0.01)])
        a = sic_decode(c, [(1, 3.0)], NetworkConfig(total_bandwidth_hz=60e3))
        b = sic_decode(c, [(1, 3.0)], NetworkConfig(total_bandwidth_hz=120e3))
        assert b.sum_rate_bps == pytest.approx(2 * a.sum_rate_bps)


class TestSumRate:
    def test_empty_network(self):
        cfg = NetworkConfig()
        assert instantaneous_sum_rate(_state({}, cfg), [], cfg).sum_rate_bps == 0.0

    def test_single_cluster_reduction(self):
        cfg = NetworkConfig(n_bs=1, n_subchannels=1)
        u = UserTerminal(0, 1e-5, 0.01)
        rep = instantaneous_sum_rate(_state({0: (0, 0)}, cfg), [u], cfg)
        assert rep.sum_rate_bps == pytest.approx(60e3 * math.log2(1 + 1e-7 / noise_power(cfg)))

    def test_light_traffic_matches_hand_oracle(self):
        cfg = NetworkConfig()
        users = [UserTerminal(0, 1e-5, 0.1), UserTerminal(1, 2e-5, 1.0), UserTerminal(2, 1.5e-5, 0.01)]
        assignment = {0: (0, 0), 1: (0, 0), 2: (1, 1)}
        rep = instantaneous_sum_rate(_state(assignment, cfg), users, cfg)
        ref = _evaluate(
            [(0, 0), (0, 0), (1, 1)], [0.1, 1.0, 0.01], [1e-5, 2e-5, 1.5e-5], 2, 2, 60e3, 300.0, 10e3, 10.0, 3
        )
        assert rep.sum_rate_bps == pytest.approx(ref, rel=1e-12)

    def test_disjoint_bs_additivity(self):
        cfg = NetworkConfig()
        users = [UserTerminal(0, 1e-5, 0.1), UserTerminal(1, 2e-5, 1.0), UserTerminal(2, 1.5e-5, 0.01)]
        whole = instantaneous_sum_rate(_state({0: (0, 0), 1: (0, 0), 2: (1, 1)}, cfg), users, cfg)
        a = instantaneous_sum_rate(_state({0: (0, 0), 1: (0, 0)}, cfg), users[:2], cfg)
        b = instantaneous_sum_rate(_state({2: (1, 1)}, cfg), users[2:], cfg)
        assert whole.sum_rate_bps == pytest.approx(a.sum_rate_bps + b.sum_rate_bps)

    @settings(max_examples=60)
    @given(
        st.lists(st.tuples(st.integers(-1, 3), st.sampled_from([1e-5, 1.5e-5, 2e-5]), st.sampled_from([0.01, 0.1, 1.0])),
                 min_size=1, max_size=6)
    )
    def test_array_path_agrees_with_reference(self, case):
        cfg = NetworkConfig(max_cluster_load=6)
        cells = [c for c, _, _ in case]
        gains = [g for _, g, _ in case]
        powers = [p for _, _, p in case]
        users = [UserTerminal(k, g, p) for k, (_, g, p) in enumerate(case)]
        st_ = _state({k: (None if c < 0 else divmod(c, 2)) for k, c in enumerate(cells)}, cfg)
        ref = instantaneous_sum_rate(st_, users, cfg)
        fast, served = sum_rate_arrays(cells, gains, powers, cfg)
        assert fast == pytest.approx(ref.sum_rate_bps, rel=1e-12)
        assert served == ref.served_users


class TestValidate:
    CFG = NetworkConfig(subchannel_power_cap_w=0.02)

    def _pair(self):
        users = [UserTerminal(1, 1e-5, 0.01), UserTerminal(2, 2e-5, 0.01)]
        return users, _state({1: (0, 0), 2: (0, 0)}, self.CFG)

    def test_valid_two_member_cluster(self):
        users, st_ = self._pair()
        assert validate(st_, users, self.CFG) == []

    def test_cluster_load(self):
        cfg = NetworkConfig(max_cluster_load=2)
        users = [UserTerminal(k, 1e-5 * (k + 1), 0.001) for k in range(3)]
        st_ = _state({k: (0, 0) for k in range(3)}, cfg)
        assert Violation.CLUSTER_LOAD in validate(st_, users, cfg)

    def test_power_cap(self):
        users = [UserTerminal(1, 1e-5, 0.015), UserTerminal(2, 2e-5, 0.015)]
        st_ = _state({1: (0, 0), 2: (0, 0)}, self.CFG)
        assert validate(st_, users, self.CFG) == [Violation.POWER_CAP]

    def test_sinr_threshold(self):
        # equal received powers: the stronger sees SINR ~1 > 0.26, so push it below
        users = [UserTerminal(1, 2e-5, 0.01), UserTerminal(2, 2e-5, 0.001)]
        st_ = _state({1: (0, 0), 2: (0, 0)}, self.CFG)
        assert validate(st_, users, self.CFG) == [Violation.SINR_THRESHOLD]

    def test_gain_order(self):
        users, st_ = self._pair()
        wrong = ClusterSnapshot(0, 0, ((2, 2e-5, 0.01), (1, 1e-5, 0.01)))
        assert Violation.GAIN_ORDER in validate(st_, users, self.CFG, clusters={(0, 0): wrong})

    def test_system_load(self):
        cfg = NetworkConfig()
        users = [UserTerminal(1, 1e-5, 0.01), UserTerminal(2, 2e-5, 0.01)]
        st_ = _state({1: (0, 0), 2: None}, cfg)
        assert validate(st_, users, cfg) == [Violation.SYSTEM_LOAD]

    def test_single_user_system_is_not_a_load_violation(self):
        cfg = NetworkConfig(n_bs=1, n_subchannels=1)
        users = [UserTerminal(0, 1e-5, 0.01)]
        assert validate(_state({0: (0, 0)}, cfg), users, cfg) == []

    def test_single_cluster(self):
        users, _ = self._pair()
        st_ = AssociationState({1: (0, 0), 2: (0, 0)}, np.array([[1, 0], [0, 0]]))
        assert validate(st_, users, self.CFG) == [Violation.SINGLE_CLUSTER]

    def test_out_of_grid_cell(self):
        users, _ = self._pair()
        st_ = _state({1: (0, 0), 2: (0, 0)}, self.CFG)
        st_.assignment[2] = (5, 0)
        assert Violation.SINGLE_CLUSTER in validate(st_, users, self.CFG)


class TestSampling:
    def test_degenerate_range(self):
        cfg = NetworkConfig(n_bs=1, n_subchannels=2, max_cluster_load=1)
        rng = np.random.default_rng(0)
        assert {len(sample_active_users(rng, cfg, 2)) for _ in range(50)} == {2}

    def test_heavy_traffic_mean(self):
        cfg = NetworkConfig(max_cluster_load=10)
        rng = np.random.default_rng(1)
        counts = [len(sample_active_users(rng, cfg, 40)) for _ in range(100_000)]
        assert min(counts) >= 2 and max(counts) <= 40
        assert np.mean(counts) == pytest.approx(21, abs=0.5)

    def test_gains_and_powers_from_levels(self):
        cfg = NetworkConfig()
        rng = np.random.default_rng(2)
        for _ in range(200):
            for u in sample_active_users(rng, cfg, 12):
                assert u.gain in (1e-5, 1.5e-5, 2e-5)
                assert u.tx_power_w in cfg.power_levels_w

    def test_population_too_small(self):
        with pytest.raises(ConfigError):
            sample_active_users(np.random.default_rng(0), NetworkConfig(), 5)


class TestPowerControl:
    @settings(max_examples=80)
    @given(st.lists(st.tuples(st.integers(0, 3), st.sampled_from([1e-5, 1.5e-5, 2e-5])), min_size=1, max_size=8))
    def test_respects_cap_and_levels(self, case):
        cfg = NetworkConfig(max_cluster_load=8, subchannel_power_cap_w=2.0)
        cells = [c for c, _ in case]
        gains = [g for _, g in case]
        powers = controlled_powers(cells, gains, cfg)
        for c in set(cells):
            members = [k for k in range(len(cells)) if cells[k] == c]
            assert sum(powers[k] for k in members) <= 2.0 * (1 + 1e-12) or all(
                powers[k] == min(cfg.power_levels_w) for k in members
            )
        assert all(p in cfg.power_levels_w for p in powers)

    def test_isolated_clusters_decode(self):
        cfg = NetworkConfig()
        cells = [0, 0, 0]
        gains = [1e-5, 1.5e-5, 2e-5]
        powers = controlled_powers(cells, gains, cfg)
        users = [UserTerminal(k, g, p) for k, (g, p) in enumerate(zip(gains, powers))]
        st_ = _state({k: (0, 0) for k in range(3)}, cfg)
        assert validate(st_, users, cfg) == []
