import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from spikecloud.energy import (
    E_AC,
    E_MAC,
    EnergyConstants,
    LayerOps,
    OpCount,
    build_report,
    calibrate_bit_seconds,
    count_flops,
    dynamic_energy,
    fire_rate_bound_holds,
    measure_firerate,
    op_count,
    report,
    static_energy,
    static_energy_calibrated,
)
from spikecloud.errors import ConfigError
from spikecloud.pointcloud import group_points
from spikecloud.snn import NetworkConfig, SampleBatch
from spikecloud.training import build_network


def test_fc_four_to_three():
    ops = OpCount([LayerOps("fc", 1 * 4 * 3)], T=1)
    assert ops.flops == 12


def test_first_local_conv_macs():
    flops = dict(count_flops(NetworkConfig(N=1024, M=64, K=24)))
    assert flops["local.embed1.conv"] == 294_912 == 6 * 32 * 64 * 24


def test_doubling_k_doubles_member_branch():
    a = dict(count_flops(NetworkConfig(K=24)))
    b = dict(count_flops(NetworkConfig(K=48)))
    member = [n for n in a if n.startswith(("local.embed1", "local.res1"))]
    assert member and all(b[n] == 2 * a[n] for n in member)
    assert all(b[n] == a[n] for n in a if n not in member)


def batch_of(cfg, n=2, fill=None):
    rng = np.random.default_rng(0)
    g = [group_points(rng.random((cfg.N, 3)), cfg.M, cfg.K, cfg.grouping_variant, i) for i in range(n)]
    b = SampleBatch.from_grouped(g, [0] * n)
    if fill is not None:
        b.ch1[:] = fill
        b.ch2[:] = fill
    return b


CFG = NetworkConfig(N=48, M=6, K=4, T=4)


def test_zero_input_rate_zero():
    rates = measure_firerate(build_network(CFG, 0), batch_of(CFG, fill=0.0))
    assert rates["local.embed1.conv"] == 0.0 and rates["local.embed2.conv"] == 0.0


def test_saturated_input_rate_one():
    rates = measure_firerate(build_network(CFG, 0), batch_of(CFG, fill=1.5))
    assert rates["local.embed1.conv"] == 1.0 and rates["local.embed2.conv"] == 1.0


def test_rates_bounded_and_cover_every_layer():
    net = build_network(CFG, 0)
    rates = measure_firerate(net, batch_of(CFG, 3))
    assert set(rates) == {n for n, _ in count_flops(CFG)}
    assert all(0 <= r <= 1 for r in rates.values())
    assert net.training  # mode restored


def test_table_rows():
    assert dynamic_energy(0.9e9, "snn") == pytest.approx(0.82e-3, rel=0.02)
    assert dynamic_energy(0.9e9, "snn") == pytest.approx(0.81e-3, rel=1e-12)
    assert dynamic_energy(38.82e9, "ann") == pytest.approx(178.6e-3, rel=1e-3)
    assert dynamic_energy(0, "snn") == 0.0


def test_unknown_regime():
    with pytest.raises(ConfigError):
        dynamic_energy(1.0, "quantum")


def test_static_examples():
    assert static_energy(1e6, 32, 12.991e-12, 1.0) == pytest.approx(4.157e-4, rel=1e-3)
    assert static_energy(1e6, 32, 12.991e-12, 0.0) == 0.0
    with pytest.raises(ConfigError):
        static_energy(-1)
    with pytest.raises(ConfigError):
        EnergyConstants(e_ac=-1)


def test_static_against_hand_product():
    # 2.5e5 params * 16 bits * 12.991e-12 W * 0.5 s, multiplied out in steps
    bits = 250_000 * 16
    watts = bits * 12.991e-12
    assert static_energy(250_000, 16, 12.991e-12, 0.5) == pytest.approx(watts * 0.5, rel=1e-15)


def test_calibration_reproduces_reference_row():
    k = calibrate_bit_seconds(0.58e6, 0.756e-3)
    assert k == pytest.approx(100.33, abs=0.01)
    assert static_energy_calibrated(0.58e6, k) == pytest.approx(0.756e-3, rel=1e-12)
    with pytest.raises(ConfigError):
        calibrate_bit_seconds(0, 1.0)


@given(st.floats(0, 1), st.integers(1, 64), st.integers(0, 10**9), st.floats(0.1, 10))
def test_linear_in_rate_t_flops(rate, T, flops, k):
    base = dynamic_energy(OpCount([LayerOps("l", flops, rate)], T))
    assert base == pytest.approx(rate * T * flops * E_AC, rel=1e-12, abs=1e-30)
    scaled = dynamic_energy(OpCount([LayerOps("l", flops, min(1.0, rate * k))], T))
    if rate * k <= 1:
        assert scaled == pytest.approx(k * base, rel=1e-9, abs=1e-30)
    assert dynamic_energy(OpCount([LayerOps("l", flops, rate)], 2 * T)) == pytest.approx(2 * base, rel=1e-12, abs=1e-30)


def test_report_two_pass_oracle_and_bound():
    net = build_network(CFG, 1)
    rep = report(net, batch_of(CFG, 3))
    # independent pass over the serialized layers
    sops = math.fsum(l["firerate"] * CFG.T * l["flops"] for l in rep.to_dict()["layers"])
    flops = sum(l["flops"] for l in rep.layers)
    assert rep.sops == pytest.approx(sops, rel=1e-12)
    assert rep.flops == flops
    assert rep.dynamic_j == pytest.approx(sops * E_AC, rel=1e-12)
    assert rep.ann_dynamic_j == pytest.approx(flops * E_MAC, rel=1e-12)
    assert rep.params == sum(p.numel() for p in net.parameters())
    assert fire_rate_bound_holds(rep)
    csv_rows = rep.to_csv().splitlines()
    assert csv_rows[0] == "name,flops,firerate,sops" and csv_rows[-1].startswith("total,")


@given(st.lists(st.floats(0, 1), min_size=1, max_size=6), st.integers(1, 5))
def test_bound_on_synthetic_reports(rates, T):
    ops = OpCount([LayerOps(f"l{i}", 1000 * (i + 1), r) for i, r in enumerate(rates)], T)
    rep = build_report(ops, 10)
    if all(r * T * E_AC <= E_MAC for r in rates):
        assert rep.dynamic_j <= rep.ann_dynamic_j
    assert fire_rate_bound_holds(rep)


def test_op_count_without_rates_is_zero_energy():
    assert dynamic_energy(op_count(CFG)) == 0.0
