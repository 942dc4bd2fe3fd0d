"""Burst inventories and trace-driven transfer-cycle simulation.

A burst is a maximal run of consecutive word addresses; the DMA restarts
(t_start cycles) at every discontinuity and otherwise streams p words per
cycle.  The layer simulator walks the exact production pipeline the
analytic model assumes, but prices every transfer from the bursts its
trace actually produces.  Per-channel continuity is tracked so streams
that genuinely continue across loop steps (the forward weight scan,
block-sized output slabs) pay no second restart, while tile-granular
feature transfers restart per descriptor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import EmptyTrace
from .model import DeviceSpec, LayerSpec, ceil_div
from .plan import Channel, Process, TilePlan
from .layout import Run, Sequence, Transfer, layer_sequences, merge_runs


@dataclass(frozen=True)
class Burst:
    start: int
    length: int


def split_bursts(trace: list[Run]) -> list[Burst]:
    """Maximal contiguous runs of a trace; concatenation reproduces it."""
    if not trace:
        raise EmptyTrace("cannot split an empty trace")
    return [Burst(s, l) for s, l in merge_runs(list(trace))]


def transfer_cycles(bursts: list[Burst], dev: DeviceSpec) -> int:
    """One restart penalty per burst plus streaming at p words/cycle."""
    return sum(dev.t_start + ceil_div(b.length, dev.p) for b in bursts)


def _beats(length: int, slot_words: int | None, p: int) -> int:
    # channel-interleaved streams hand the consumer one slot (e.g. the Tn
    # words of a pixel) per whole number of bus beats
    if slot_words and length % slot_words == 0:
        return (length // slot_words) * ceil_div(slot_words, p)
    return ceil_div(length, p)


@dataclass
class ChannelState:
    next_addr: int | None = None
    bursts: int = 0
    words: int = 0


@dataclass
class SimResult:
    cycles: int
    bursts: dict[str, int] = field(default_factory=dict)
    words: dict[str, int] = field(default_factory=dict)
    burst_lengths: dict[str, dict[int, int]] = field(default_factory=dict)

    @property
    def restarts(self) -> int:
        return sum(self.bursts.values())


class _Pricer:
    """Prices transfers in bus order, carrying continuity per channel.

    A transfer whose first address continues the channel's previous one
    extends the open burst instead of restarting.
    """

    def __init__(self, dev: DeviceSpec):
        self.dev = dev
        self.state: dict[Channel, ChannelState] = {c: ChannelState() for c in Channel}
        self.hist: dict[Channel, dict[int, int]] = {c: {} for c in Channel}
        self._open: dict[Channel, int] = {c: 0 for c in Channel}

    def price(self, tr: Transfer, charge_starts: bool = True) -> int:
        st = self.state[tr.channel]
        cycles = 0
        runs = tr.runs if tr.per_run_start else merge_runs(tr.runs)
        for j, (start, length) in enumerate(runs):
            # a tile-granular transfer is its own descriptor: the double
            # buffer swap forces a restart even at a contiguous address
            if tr.per_run_start or (j == 0 and tr.fresh_start) \
                    or start != st.next_addr:
                self._close(tr.channel)
                st.bursts += 1
                if charge_starts:
                    cycles += self.dev.t_start
            self._open[tr.channel] += length
            cycles += _beats(length, tr.slot_words, self.dev.p)
            st.next_addr = start + length
            st.words += length
        return cycles

    def _close(self, channel: Channel) -> None:
        n = self._open[channel]
        if n:
            self.hist[channel][n] = self.hist[channel].get(n, 0) + 1
            self._open[channel] = 0

    def result(self, cycles: int) -> SimResult:
        for c in Channel:
            self._close(c)
        return SimResult(
            cycles=cycles,
            bursts={c.value: s.bursts for c, s in self.state.items() if s.words},
            words={c.value: s.words for c, s in self.state.items() if s.words},
            burst_lengths={c.value: dict(self.hist[c])
                           for c in Channel if self.state[c].words},
        )


def _production_cycles(pricer: _Pricer, prod, comp_store_fold: bool) -> int:
    """Pipeline cost of one production: first chunk's load exposed, later
    loads overlap the previous compute, last compute exposed or folded with
    the store."""
    loads = []
    comps = []
    stores_per_chunk = prod.chunk_stores
    for chunk in prod.chunks:
        cost = 0
        for tr in chunk.loads:
            c = pricer.price(tr)
            if not tr.overlapped:
                cost = max(cost, c)
            # overlapped transfers advance continuity but hide their cycles
        loads.append(cost)
        comps.append(chunk.comp)
    total = loads[0]
    for k in range(1, len(loads)):
        total += max(loads[k], comps[k - 1])
        if stores_per_chunk is not None:
            total += pricer.price(stores_per_chunk[k - 1], charge_starts=True)
    tail = comps[-1]
    if stores_per_chunk is not None:
        total += tail + pricer.price(stores_per_chunk[-1], charge_starts=True)
        return total
    if prod.store is not None and comp_store_fold:
        total += max(tail, pricer.price(prod.store, charge_starts=True))
        return total
    total += tail
    return total


def simulate_sequences(seqs: list[Sequence], dev: DeviceSpec) -> SimResult:
    pricer = _Pricer(dev)
    cycles = 0
    for seq in seqs:
        prods = seq.productions
        for p_i, prod in enumerate(prods):
            final = p_i == len(prods) - 1
            if final and prod.store is not None:
                cycles += _production_cycles(pricer, prod, comp_store_fold=False)
                # exposed final store: its first restart is the sequence's
                # tail penalty, further fragmentation is its own
                st = pricer.state[prod.store.channel]
                pre = st.bursts
                cost = pricer.price(prod.store, charge_starts=True)
                extra = st.bursts - pre
                if extra and seq.tail_start:
                    cost -= dev.t_start  # first restart charged by the tail below
                cycles += cost
            else:
                cycles += _production_cycles(pricer, prod, comp_store_fold=True)
        if seq.tail_start:
            cycles += dev.t_start
    return pricer.result(cycles)


def simulate_layer(process: Process, layer: LayerSpec, plan: TilePlan,
                   kind: str, dev: DeviceSpec, batch: int,
                   idx: int | None = None) -> SimResult:
    """Trace-driven cycles for one layer pass under one layout."""
    seqs = layer_sequences(process, layer, plan, kind, batch, idx)
    return simulate_sequences(seqs, dev)


def stream_estimate(layer: LayerSpec, process: Process, dev: DeviceSpec,
                    batch: int) -> int:
    """Coarse streaming estimate for layers without a tiled kernel (pool,
    batch-norm, relu, loss): read the inputs once, write the outputs once,
    each as one long burst per tensor."""
    words_in = batch * layer.n * layer.r_in * layer.c_in
    words_out = batch * layer.m * layer.r * layer.c
    if process is Process.WU:
        return 0
    if process is Process.BP:
        words_in, words_out = words_out, words_in
    return 2 * dev.t_start + ceil_div(words_in, dev.p) + ceil_div(words_out, dev.p)


__all__ = ["Burst", "split_bursts", "transfer_cycles", "SimResult",
           "simulate_sequences", "simulate_layer", "stream_estimate"]
