import pytest
from hypothesis import given, settings, strategies as st

from trainsim.dma import (Burst, simulate_layer, split_bursts, stream_estimate,
                          transfer_cycles)
from trainsim.errors import EmptyTrace
from trainsim.layout import FeatureGeom, LayoutKind, trace_layer
from trainsim.model import (DeviceSpec, Kind, LayerSpec, NetworkSpec,
                            ceil_div, validate_and_infer)
from trainsim.plan import Channel, PlanEntry, Process, TilePlan


def conv_layer(m, n, r, c, k, s, pad=0):
    net = NetworkSpec(layers=(LayerSpec(Kind.CONV, m=m, n=n, r=r, c=c, k=k,
                                        s=s, pad=pad),))
    return validate_and_infer(net).layers[0]


# ------------------------------------------------------------ split_bursts

def test_split_bursts_by_definition():
    bursts = split_bursts([(0, 1), (1, 1), (2, 2), (10, 2)])
    assert [(b.start, b.length) for b in bursts] == [(0, 4), (10, 2)]


def test_split_bursts_fully_contiguous():
    assert split_bursts([(0, 16)]) == [Burst(0, 16)]


def test_split_bursts_empty_trace():
    with pytest.raises(EmptyTrace):
        split_bursts([])


def test_split_bursts_bchw_tile():
    g = FeatureGeom(LayoutKind.BCHW, 1, 2, 5, 5)
    bursts = split_bursts(g.tile_runs(0, 0, 2, 1, 4, 1, 4))
    assert len(bursts) == 6 and all(b.length == 3 for b in bursts)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 40), st.integers(1, 5)), min_size=1,
                max_size=10))
def test_split_bursts_preserves_words_and_is_maximal(runs):
    bursts = split_bursts(runs)
    assert sum(b.length for b in bursts) == sum(l for _, l in runs)
    for a, b in zip(bursts, bursts[1:]):
        assert a.start + a.length != b.start  # merging any pair would break


# --------------------------------------------------------- transfer_cycles

def test_transfer_cycles_single_burst():
    assert transfer_cycles([Burst(0, 16)], DeviceSpec()) == 404


def test_transfer_cycles_six_short_bursts():
    dev = DeviceSpec()
    assert transfer_cycles([Burst(i * 10, 3) for i in range(6)], dev) == 2406


def test_transfer_cycles_monotone():
    dev = DeviceSpec()
    base = [Burst(0, 8), Burst(100, 8)]
    assert transfer_cycles(base + [Burst(200, 1)], dev) > transfer_cycles(base, dev)
    merged = [Burst(0, 16)]
    assert transfer_cycles(merged, dev) < transfer_cycles(base, dev)


def test_contiguous_reshaped_ifm_matches_closed_form():
    # whole-tile load cost: t_start + Tn/p * in_rows * in_cols
    layer = conv_layer(16, 16, 6, 6, 3, 1, pad=1)
    plan = TilePlan(tm=16, tn=16, entries={0: PlanEntry(tr=6, tc=6, m_on=16)})
    dev = DeviceSpec()
    tr = trace_layer(Process.FP, layer, plan, LayoutKind.RESHAPED, 1)
    bursts = split_bursts(tr[Channel.IFM])
    assert len(bursts) == 1
    # padding is phantom, so the tile covers the stored 6x6 map exactly
    assert transfer_cycles(bursts, dev) == 400 + ceil_div(16, 4) * 6 * 6


# ----------------------------------------------------------- simulate_layer

def degenerate_case():
    layer = conv_layer(2, 2, 2, 2, 1, 1)
    plan = TilePlan(tm=2, tn=2, entries={0: PlanEntry(tr=2, tc=2, m_on=2)})
    dev = DeviceSpec(stream_width_words=2)
    return layer, plan, dev


def test_simulate_degenerate_single_tile():
    layer, plan, dev = degenerate_case()
    res = simulate_layer(Process.FP, layer, plan, LayoutKind.RESHAPED, dev, 1)
    # hand chain: serialized load (404) + compute (4) + store (4) + restart
    assert res.cycles == 812


def test_simulate_alexnet_conv3_fp_close_to_analytic(alexnet, alexnet_plan, zcu102):
    from trainsim.perf import layer_process_latency
    analytic = layer_process_latency(alexnet, 4, alexnet_plan, zcu102, 4, Process.FP)
    res = simulate_layer(Process.FP, alexnet.layers[4], alexnet_plan,
                         LayoutKind.RESHAPED, zcu102, 4, idx=4)
    assert analytic == 2_478_272
    assert abs(analytic - res.cycles) / res.cycles <= 0.05


def test_simulate_reshaped_beats_bchw(alexnet, alexnet_plan, zcu102):
    layer = alexnet.layers[4]
    a = simulate_layer(Process.FP, layer, alexnet_plan, LayoutKind.RESHAPED,
                       zcu102, 4, idx=4)
    b = simulate_layer(Process.FP, layer, alexnet_plan, LayoutKind.BCHW,
                       zcu102, 4, idx=4)
    assert a.cycles < b.cycles
    assert a.restarts < b.restarts


def test_simulate_batch_monotone():
    layer = conv_layer(8, 8, 8, 8, 3, 1, pad=1)
    plan = TilePlan(tm=4, tn=4, entries={0: PlanEntry(tr=4, tc=8, m_on=8)})
    dev = DeviceSpec()
    prev = 0
    for batch in (1, 2, 4):
        cyc = simulate_layer(Process.FP, layer, plan, LayoutKind.RESHAPED,
                             dev, batch).cycles
        assert cyc > prev
        prev = cyc


def test_stream_estimate_positive_for_pool():
    net = validate_and_infer(NetworkSpec(layers=(
        LayerSpec(Kind.CONV, m=4, n=3, r=8, c=8, k=3, s=1, pad=1),
        LayerSpec(Kind.MAXPOOL, k=2, s=2))))
    est = stream_estimate(net.layers[1], Process.FP, DeviceSpec(), 2)
    assert est > 800  # two restarts plus both maps


def test_unpadded_tile_cost_equals_closed_form():
    # without padding the stored window equals the formula's window, so the
    # measured tile cost reproduces t_ifm = t_start + Tn/p * rows * cols
    layer = conv_layer(16, 16, 4, 4, 3, 1, pad=0)
    plan = TilePlan(tm=16, tn=16, entries={0: PlanEntry(tr=4, tc=4, m_on=16)})
    tr = trace_layer(Process.FP, layer, plan, LayoutKind.RESHAPED, 1)
    bursts = split_bursts(tr[Channel.IFM])
    assert transfer_cycles(bursts, DeviceSpec()) == 400 + 4 * 6 * 6
