"""Word-level DRAM layouts, address traces, and region planning.

Three feature layouts are modeled:

  BCHW        batch / channel / row / col, the plain row-major order
  BHWC_REUSE  channel-last order with on-chip feature reuse in FP/BP and
              weights pre-allocated tile-by-tile in forward scan order
  RESHAPED    channels grouped in blocks of Tm laid row/col/channel inside
              the group; groups of one weight-resident block (M_on
              channels) stay together per image, with images of a batch
              interleaved at block granularity

Weight storage for the tile-major layouts is (block, m-tile, n-tile) with
(kr, kc, n, m) inside a tile, so the forward pass reads the whole array as
one contiguous scan.  All maps are fully packed bijections onto their
regions; addresses are 32-bit word indices, never bytes.

Traces are run-length encoded: a transfer is an ordered list of (start,
length) runs, and loop walkers emit transfers grouped into the production
pipeline the cycle model assumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (ConfigError, OutOfRange, RegionMismatch, RegionOverflow,
                     ShapeMismatch)
from .model import LayerSpec, NetworkSpec, Kind, ceil_div
from .plan import Channel, LayerTile, Process, TilePlan, blocks

Run = tuple[int, int]


class LayoutKind:
    BCHW = "bchw"
    BHWC_REUSE = "bhwc"
    RESHAPED = "reshaped"

    ALL = (BCHW, BHWC_REUSE, RESHAPED)

    @staticmethod
    def parse(name: str) -> str:
        key = name.strip().lower()
        aliases = {"bchw": LayoutKind.BCHW, "bhwc": LayoutKind.BHWC_REUSE,
                   "bhwc_reuse": LayoutKind.BHWC_REUSE, "reshaped": LayoutKind.RESHAPED}
        if key not in aliases:
            raise ConfigError(f"unknown layout {name!r}")
        return aliases[key]


def merge_runs(runs: list[Run]) -> list[Run]:
    """Collapse adjacent runs; keeps order, never reorders addresses."""
    out: list[Run] = []
    for start, length in runs:
        if length <= 0:
            continue
        if out and out[-1][0] + out[-1][1] == start:
            out[-1] = (out[-1][0], out[-1][1] + length)
        else:
            out.append((start, length))
    return out


def fwd_window(t0: int, t1: int, k: int, s: int, pad: int, extent: int) -> tuple[int, int]:
    """Stored input interval feeding output positions [t0, t1)."""
    lo = t0 * s - pad
    hi = (t1 - 1) * s + k - pad
    return max(0, lo), min(extent, hi)


def bp_window(y0: int, y1: int, k: int, s: int, pad: int, extent: int) -> tuple[int, int]:
    """Stored loss interval feeding input-loss positions [y0, y1)."""
    lo = -(-(y0 + pad - (k - 1)) // s)  # ceil
    hi = (y1 - 1 + pad) // s + 1
    return max(0, lo), min(extent, hi)


# ---------------------------------------------------------------- features


@dataclass(frozen=True)
class FeatureGeom:
    """Address map of one (batch, ch, rows, cols) feature tensor."""

    kind: str
    batch: int
    ch: int
    rows: int
    cols: int
    tm: int = 1
    m_on: int = 1

    def __post_init__(self):
        if self.kind == LayoutKind.RESHAPED:
            if self.m_on % self.tm:
                raise ValueError("m_on must be a multiple of tm")

    def words(self) -> int:
        return self.batch * self.ch * self.rows * self.cols

    def group_width(self, ch: int) -> int:
        g = ch // self.tm
        return min(self.tm, self.ch - g * self.tm)

    def _block(self, ch: int) -> tuple[int, int, int]:
        """(block index, channels in block, block base word)."""
        g = ch // self.m_on
        full = self.m_on * self.rows * self.cols * self.batch
        cb = min(self.m_on, self.ch - g * self.m_on)
        return g, cb, g * full

    def addr(self, b: int, ch: int, r: int, c: int) -> int:
        if not (0 <= b < self.batch and 0 <= ch < self.ch
                and 0 <= r < self.rows and 0 <= c < self.cols):
            raise OutOfRange(f"({b},{ch},{r},{c}) outside feature tensor")
        if self.kind == LayoutKind.BCHW:
            return ((b * self.ch + ch) * self.rows + r) * self.cols + c
        if self.kind == LayoutKind.BHWC_REUSE:
            return ((b * self.rows + r) * self.cols + c) * self.ch + ch
        g, cb, base = self._block(ch)
        local = ch - g * self.m_on
        gl = local // self.tm
        wg = self.group_width(ch)
        return (base + b * cb * self.rows * self.cols
                + gl * self.tm * self.rows * self.cols
                + (r * self.cols + c) * wg + (local - gl * self.tm))

    def addr_grid(self) -> np.ndarray:
        """words()-sized array: flat (b,ch,r,c) coordinate -> word index."""
        b = np.arange(self.batch)[:, None, None, None]
        ch = np.arange(self.ch)[None, :, None, None]
        r = np.arange(self.rows)[None, None, :, None]
        c = np.arange(self.cols)[None, None, None, :]
        if self.kind == LayoutKind.BCHW:
            a = ((b * self.ch + ch) * self.rows + r) * self.cols + c
        elif self.kind == LayoutKind.BHWC_REUSE:
            a = ((b * self.rows + r) * self.cols + c) * self.ch + ch
        else:
            g = ch // self.m_on
            cb = np.minimum(self.m_on, self.ch - g * self.m_on)
            base = g * (self.m_on * self.rows * self.cols * self.batch)
            local = ch - g * self.m_on
            gl = local // self.tm
            wg = np.minimum(self.tm, self.ch - (ch // self.tm) * self.tm)
            a = (base + b * cb * self.rows * self.cols
                 + gl * self.tm * self.rows * self.cols
                 + (r * self.cols + c) * wg + (local - gl * self.tm))
        return a.reshape(-1)

    def tile_runs(self, b: int, ch0: int, ch1: int, r0: int, r1: int,
                  c0: int, c1: int) -> list[Run]:
        """Runs covering channels [ch0,ch1) x rows [r0,r1) x cols [c0,c1)
        in this layout's scan order."""
        if r0 >= r1 or c0 >= c1 or ch0 >= ch1:
            return []
        runs: list[Run] = []
        if self.kind == LayoutKind.BCHW:
            # the baseline engine programs one descriptor per tile row
            # segment, so runs stay per (channel, row) and are not merged
            for ch in range(ch0, ch1):
                for r in range(r0, r1):
                    runs.append((self.addr(b, ch, r, c0), c1 - c0))
            return runs
        elif self.kind == LayoutKind.BHWC_REUSE:
            if ch0 == 0 and ch1 == self.ch:
                for r in range(r0, r1):
                    runs.append((self.addr(b, 0, r, c0), (c1 - c0) * self.ch))
            else:
                for r in range(r0, r1):
                    for c in range(c0, c1):
                        runs.append((self.addr(b, ch0, r, c), ch1 - ch0))
        else:
            wg = self.group_width(ch0)
            if ch0 % self.tm or (ch1 - ch0) != wg:
                raise ShapeMismatch("reshaped tiles must cover whole channel groups")
            if c0 == 0 and c1 == self.cols:
                runs.append((self.addr(b, ch0, r0, 0), (r1 - r0) * self.cols * wg))
            else:
                for r in range(r0, r1):
                    runs.append((self.addr(b, ch0, r, c0), (c1 - c0) * wg))
        return merge_runs(runs)

    def slot_words(self, ch0: int, ch1: int) -> int | None:
        # channel-interleaved layouts consume whole channel slices per pixel
        if self.kind == LayoutKind.BCHW:
            return None
        return ch1 - ch0


# ----------------------------------------------------------------- weights


@dataclass(frozen=True)
class WeightGeom:
    """Address map of one (m, n, k, k) weight tensor."""

    kind: str
    m: int
    n: int
    k: int
    tm: int
    tn: int
    m_on: int
    _chunk_base: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.kind != LayoutKind.BCHW:
            if self.m_on % self.tm:
                raise ValueError("m_on must be a multiple of tm")
            base = 0
            for mt in range(self.m_tiles()):
                wm = self.m_width(mt)
                for nt in range(self.n_tiles()):
                    wn = self.n_width(nt)
                    self._chunk_base[(mt, nt)] = base
                    base += wm * wn * self.k * self.k

    def words(self) -> int:
        return self.m * self.n * self.k * self.k

    def m_tiles(self) -> int:
        return ceil_div(self.m, self.tm)

    def n_tiles(self) -> int:
        return ceil_div(self.n, self.tn)

    def m_width(self, mt: int) -> int:
        return min(self.tm, self.m - mt * self.tm)

    def n_width(self, nt: int) -> int:
        return min(self.tn, self.n - nt * self.tn)

    def addr(self, m: int, n: int, kr: int, kc: int) -> int:
        if not (0 <= m < self.m and 0 <= n < self.n
                and 0 <= kr < self.k and 0 <= kc < self.k):
            raise OutOfRange(f"({m},{n},{kr},{kc}) outside weight tensor")
        if self.kind == LayoutKind.BCHW:
            return ((m * self.n + n) * self.k + kr) * self.k + kc
        mt, nt = m // self.tm, n // self.tn
        wm, wn = self.m_width(mt), self.n_width(nt)
        dm, dn = m - mt * self.tm, n - nt * self.tn
        return self._chunk_base[(mt, nt)] + ((kr * self.k + kc) * wn + dn) * wm + dm

    def addr_grid(self) -> np.ndarray:
        idx = np.arange(self.words())
        k2 = self.k * self.k
        kc = idx % self.k
        kr = (idx // self.k) % self.k
        n = (idx // k2) % self.n
        m = idx // (k2 * self.n)
        if self.kind == LayoutKind.BCHW:
            return idx.copy()
        a = np.empty_like(idx)
        for i in range(self.words()):
            a[i] = self.addr(int(m[i]), int(n[i]), int(kr[i]), int(kc[i]))
        return a

    def chunk_words(self, mt: int, nt: int) -> int:
        return self.m_width(mt) * self.n_width(nt) * self.k * self.k

    def chunk_runs(self, mt: int, nt: int) -> list[Run]:
        """One (Tm x Tn) weight tile; contiguous in tile-major storage, one
        row-major slice per output channel in the baseline order."""
        if self.kind == LayoutKind.BCHW:
            wn = self.n_width(nt)
            return [(self.addr(m, nt * self.tn, 0, 0), wn * self.k * self.k)
                    for m in range(mt * self.tm, mt * self.tm + self.m_width(mt))]
        return [(self._chunk_base[(mt, nt)], self.chunk_words(mt, nt))]

    def bp_block_runs(self, mt: int, nt0: int, nt1: int) -> list[Run]:
        """Weights for one loss-channel chunk across BP-output tiles
        [nt0,nt1): a single run in tile-major storage."""
        if self.kind == LayoutKind.BCHW:
            runs = []
            for nt in range(nt0, nt1):
                runs.extend(self.chunk_runs(mt, nt))
            return merge_runs(runs)
        length = sum(self.chunk_words(mt, nt) for nt in range(nt0, nt1))
        return [(self._chunk_base[(mt, nt0)], length)]

    def slot_words(self, mt: int, nt: int) -> int | None:
        if self.kind == LayoutKind.BCHW:
            return None
        return self.m_width(mt) * self.n_width(nt)


# -------------------------------------------------------------- DRAM image


@dataclass
class DramImage:
    """Flat word-addressed memory with a named, non-overlapping region table."""

    capacity: int | None = None
    words: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float32))
    regions: dict[str, tuple[int, int]] = field(default_factory=dict)

    def add_region(self, name: str, length: int) -> tuple[int, int]:
        if name in self.regions:
            raise RegionMismatch(f"region {name!r} already exists")
        offset = int(self.words.shape[0])
        if self.capacity is not None and offset + length > self.capacity:
            raise RegionOverflow(f"region {name!r} exceeds {self.capacity} words")
        self.words = np.concatenate([self.words, np.zeros(length, dtype=np.float32)])
        self.regions[name] = (offset, length)
        return self.regions[name]

    def region(self, name: str) -> tuple[int, int]:
        return self.regions[name]


def pack(tensor: np.ndarray, geom, image: DramImage, region: str) -> None:
    """Scatter a tensor into its region under the geometry's address map."""
    offset, length = image.region(region)
    if length != geom.words() or tensor.size != geom.words():
        raise RegionMismatch(
            f"region {region!r} holds {length} words, tensor needs {geom.words()}")
    image.words[offset + geom.addr_grid()] = tensor.reshape(-1).astype(np.float32)


def unpack(geom, image: DramImage, region: str, shape: tuple[int, ...]) -> np.ndarray:
    offset, length = image.region(region)
    if length != geom.words():
        raise RegionMismatch(f"region {region!r} does not match geometry")
    return image.words[offset + geom.addr_grid()].reshape(shape).copy()


# ------------------------------------------------------------ loop walker


@dataclass
class Transfer:
    channel: Channel
    runs: list[Run]
    slot_words: int | None = None
    overlapped: bool = False  # emitted on the bus but hidden by the pipeline
    per_run_start: bool = False  # one descriptor (and restart) per run
    fresh_start: bool = False  # own descriptor: restarts even if contiguous

    def words(self) -> int:
        return sum(l for _, l in self.runs)


@dataclass
class ChunkStep:
    loads: list[Transfer]
    comp: int


@dataclass
class Production:
    chunks: list[ChunkStep]
    store: Transfer | None = None
    chunk_stores: list[Transfer] | None = None  # gradient tiles streamed per chunk


@dataclass
class Sequence:
    """Productions sharing one double-buffer pipeline; all stores except the
    final production's fold into the compute max, end restarts per flag."""

    productions: list[Production]
    tail_start: bool = False


@dataclass(frozen=True)
class WalkSpec:
    """Everything a walker needs for one layer under one plan."""

    layer: LayerSpec
    tm: int
    tn: int
    tile: LayerTile      # resolved for the process being walked
    fp_m_on: int         # weight storage block size (forward-side)
    kind: str
    batch: int

    def feature_geom(self, ch: int, rows: int, cols: int, m_on: int) -> FeatureGeom:
        m_on_eff = min(m_on, ceil_div(ch, self.tm) * self.tm)
        return FeatureGeom(self.kind, self.batch, ch, rows, cols,
                           tm=self.tm, m_on=m_on_eff)

    def weight_geom(self) -> WeightGeom:
        l = self.layer
        m_on = min(self.fp_m_on, ceil_div(l.m, self.tm) * self.tm)
        if self.kind == LayoutKind.BHWC_REUSE:
            m_on = ceil_div(l.m, self.tm) * self.tm  # pre-allocated, no blocking
        return WeightGeom(self.kind, l.m, l.n, l.k, self.tm, self.tn, m_on)


def resolve_walk(layer: LayerSpec, plan: TilePlan, idx: int, process: Process,
                 kind: str, batch: int) -> WalkSpec:
    tile = plan.tile_for(idx, layer, process)
    fp_m_on = plan.tile_for(idx, layer, Process.FP).m_on
    return WalkSpec(layer=layer, tm=plan.tm, tn=plan.tn, tile=tile,
                    fp_m_on=fp_m_on, kind=kind, batch=batch)


def _ranges(total: int, step: int) -> list[tuple[int, int]]:
    return [(i, min(total, i + step)) for i in range(0, total, step)]


def _ch_tiles(total: int, width: int) -> list[tuple[int, int]]:
    return _ranges(total, width)


def walk_fp(ws: WalkSpec) -> list[Sequence]:
    l, t = ws.layer, ws.tile
    ifm = ws.feature_geom(l.n, l.r_in, l.c_in, ws.fp_m_on)
    out = ws.feature_geom(l.m, l.r, l.c, ws.fp_m_on)
    wei = ws.weight_geom()
    k2 = l.k * l.k
    n_tiles = _ch_tiles(l.n, ws.tn)
    row_tiles = _ranges(l.r, t.tr)
    col_tiles = _ranges(l.c, t.tc)

    if ws.kind == LayoutKind.RESHAPED:
        seqs = []
        mt_global = 0
        for mon_eff in blocks(l.m, t.m_on):
            m_tiles = ceil_div(mon_eff, ws.tm)
            for b in range(ws.batch):
                prods = []
                for mt in range(mt_global, mt_global + m_tiles):
                    ch0 = mt * ws.tm
                    ch1 = min(l.m, ch0 + ws.tm)
                    for (r0, r1) in row_tiles:
                        for (c0, c1) in col_tiles:
                            i0, i1 = fwd_window(r0, r1, l.k, l.s, l.pad, l.r_in)
                            j0, j1 = fwd_window(c0, c1, l.k, l.s, l.pad, l.c_in)
                            chunks = []
                            for nt, (n0, n1) in enumerate(n_tiles):
                                loads = [Transfer(Channel.IFM,
                                                  ifm.tile_runs(b, n0, n1, i0, i1, j0, j1),
                                                  ifm.slot_words(n0, n1))]
                                if b == 0 and r0 == 0 and c0 == 0:
                                    loads.append(Transfer(Channel.WEI,
                                                          wei.chunk_runs(mt, nt),
                                                          wei.slot_words(mt, nt)))
                                chunks.append(ChunkStep(loads, (r1 - r0) * (c1 - c0) * k2))
                            store = Transfer(Channel.OUT,
                                             out.tile_runs(b, ch0, ch1, r0, r1, c0, c1),
                                             out.slot_words(ch0, ch1))
                            prods.append(Production(chunks, store=store))
                seqs.append(Sequence(prods, tail_start=True))
            mt_global += m_tiles
        return seqs

    if ws.kind == LayoutKind.BCHW:
        seqs = []
        for b in range(ws.batch):
            prods = []
            for (r0, r1) in row_tiles:
                for (c0, c1) in col_tiles:
                    for mt, (m0, m1) in enumerate(_ch_tiles(l.m, ws.tm)):
                        i0, i1 = fwd_window(r0, r1, l.k, l.s, l.pad, l.r_in)
                        j0, j1 = fwd_window(c0, c1, l.k, l.s, l.pad, l.c_in)
                        chunks = []
                        for nt, (n0, n1) in enumerate(n_tiles):
                            loads = [Transfer(Channel.IFM,
                                              ifm.tile_runs(b, n0, n1, i0, i1, j0, j1),
                                              ifm.slot_words(n0, n1)),
                                     Transfer(Channel.WEI, wei.chunk_runs(mt, nt),
                                              wei.slot_words(mt, nt))]
                            chunks.append(ChunkStep(loads, (r1 - r0) * (c1 - c0) * k2))
                        store = Transfer(Channel.OUT,
                                         out.tile_runs(b, m0, m1, r0, r1, c0, c1),
                                         out.slot_words(m0, m1))
                        prods.append(Production(chunks, store=store))
            seqs.append(Sequence(prods, tail_start=True))
        return seqs

    # BHWC with feature reuse: the whole input map streams in once per
    # image (all channels together, one contiguous scan), weights stream
    # once per image in storage order, stores cover all channels
    seqs = []
    m_tiles = _ch_tiles(l.m, ws.tm)
    for b in range(ws.batch):
        preload = [ChunkStep([Transfer(Channel.IFM,
                                       ifm.tile_runs(b, 0, l.n, 0, l.r_in, 0, l.c_in),
                                       ifm.slot_words(0, l.n))], 0)]
        prods = [Production(preload, store=None)]
        first = True
        for (r0, r1) in row_tiles:
            for (c0, c1) in col_tiles:
                chunks = []
                for mt in range(len(m_tiles)):
                    for nt in range(len(n_tiles)):
                        loads = []
                        if first:
                            loads.append(Transfer(Channel.WEI, wei.chunk_runs(mt, nt),
                                                  wei.slot_words(mt, nt)))
                        chunks.append(ChunkStep(loads, (r1 - r0) * (c1 - c0) * k2))
                first = False
                store = Transfer(Channel.OUT,
                                 out.tile_runs(b, 0, l.m, r0, r1, c0, c1),
                                 out.slot_words(0, l.m))
                prods.append(Production(chunks, store=store))
        seqs.append(Sequence(prods, tail_start=True))
    return seqs


def walk_bp(ws: WalkSpec) -> list[Sequence]:
    """Backward pass: produces the input-side loss map; accumulates over the
    loss channels of the next layer through the transposed weights."""
    l, t = ws.layer, ws.tile
    loss_in = ws.feature_geom(l.n, l.r_in, l.c_in, t.m_on)
    loss_out = ws.feature_geom(l.m, l.r, l.c, ws.fp_m_on)
    wei = ws.weight_geom()
    k2 = l.k * l.k
    m_chunks = _ch_tiles(l.m, ws.tn)
    row_tiles = _ranges(l.r_in, t.tr)
    col_tiles = _ranges(l.c_in, t.tc)

    if ws.kind == LayoutKind.RESHAPED:
        seqs = []
        nt_global = 0
        for mon_eff in blocks(l.n, t.m_on):
            n_tiles_blk = ceil_div(mon_eff, ws.tm)
            nt0, nt1 = nt_global, nt_global + n_tiles_blk
            for b in range(ws.batch):
                prods = []
                first_prod = b == 0
                for nt in range(nt0, nt1):
                    ch0, ch1 = nt * ws.tm, min(l.n, nt * ws.tm + ws.tm)
                    for (y0, y1) in row_tiles:
                        for (x0, x1) in col_tiles:
                            i0, i1 = bp_window(y0, y1, l.k, l.s, l.pad, l.r)
                            j0, j1 = bp_window(x0, x1, l.k, l.s, l.pad, l.c)
                            chunks = []
                            for mc, (m0, m1) in enumerate(m_chunks):
                                loads = [Transfer(Channel.IFM,
                                                  loss_out.tile_runs(b, m0, m1, i0, i1, j0, j1),
                                                  loss_out.slot_words(m0, m1))]
                                if first_prod:
                                    mt = m0 // ws.tm
                                    loads.append(Transfer(
                                        Channel.WEI, wei.bp_block_runs(mt, nt0, nt1),
                                        slot_words=mon_eff * min(ws.tn, l.m),
                                        overlapped=(mc == 0), fresh_start=True))
                                chunks.append(ChunkStep(loads, (y1 - y0) * (x1 - x0) * k2))
                            first_prod = False
                            store = Transfer(Channel.OUT,
                                             loss_in.tile_runs(b, ch0, ch1, y0, y1, x0, x1),
                                             loss_in.slot_words(ch0, ch1))
                            prods.append(Production(chunks, store=store))
                seqs.append(Sequence(prods, tail_start=True))
            nt_global = nt1
        return seqs

    n_tiles = _ch_tiles(l.n, ws.tm)
    if ws.kind == LayoutKind.BCHW:
        seqs = []
        for b in range(ws.batch):
            prods = []
            for (y0, y1) in row_tiles:
                for (x0, x1) in col_tiles:
                    for nt, (ch0, ch1) in enumerate(n_tiles):
                        i0, i1 = bp_window(y0, y1, l.k, l.s, l.pad, l.r)
                        j0, j1 = bp_window(x0, x1, l.k, l.s, l.pad, l.c)
                        chunks = []
                        for mt, (m0, m1) in enumerate(m_chunks):
                            loads = [Transfer(Channel.IFM,
                                              loss_out.tile_runs(b, m0, m1, i0, i1, j0, j1),
                                              loss_out.slot_words(m0, m1)),
                                     Transfer(Channel.WEI, wei.chunk_runs(m0 // ws.tm, nt),
                                              wei.slot_words(m0 // ws.tm, nt))]
                            chunks.append(ChunkStep(loads, (y1 - y0) * (x1 - x0) * k2))
                        store = Transfer(Channel.OUT,
                                         loss_in.tile_runs(b, ch0, ch1, y0, y1, x0, x1),
                                         loss_in.slot_words(ch0, ch1))
                        prods.append(Production(chunks, store=store))
            seqs.append(Sequence(prods, tail_start=True))
        return seqs

    # BHWC: loss map resident per image, transposed weight tiles re-fetched
    seqs = []
    for b in range(ws.batch):
        preload = [ChunkStep([Transfer(Channel.IFM,
                                       loss_out.tile_runs(b, 0, l.m, 0, l.r, 0, l.c),
                                       loss_out.slot_words(0, l.m))], 0)]
        prods = [Production(preload, store=None)]
        first = True
        for (y0, y1) in row_tiles:
            for (x0, x1) in col_tiles:
                chunks = []
                for nt in range(len(n_tiles)):
                    for mc, (m0, m1) in enumerate(m_chunks):
                        loads = []
                        if first:
                            loads.append(Transfer(Channel.WEI,
                                                  wei.chunk_runs(m0 // ws.tm, nt),
                                                  wei.slot_words(m0 // ws.tm, nt)))
                        chunks.append(ChunkStep(loads, (y1 - y0) * (x1 - x0) * k2))
                first = False
                store = Transfer(Channel.OUT,
                                 loss_in.tile_runs(b, 0, l.n, y0, y1, x0, x1),
                                 loss_in.slot_words(0, l.n))
                prods.append(Production(chunks, store=store))
        seqs.append(Sequence(prods, tail_start=True))
    return seqs


def walk_wu(ws: WalkSpec) -> list[Sequence]:
    """Weight update: gradients accumulate over the batch per weight tile;
    updated weights stream out once per block after the last image."""
    l, t = ws.layer, ws.tile
    act = ws.feature_geom(l.n, l.r_in, l.c_in, ws.fp_m_on)
    loss = ws.feature_geom(l.m, l.r, l.c, ws.fp_m_on)
    wei = ws.weight_geom()
    k2 = l.k * l.k
    n_tiles = _ch_tiles(l.n, ws.tn)
    row_tiles = _ranges(l.r, t.tr)
    col_tiles = _ranges(l.c, t.tc)
    use_m_on = t.m_on if ws.kind == LayoutKind.RESHAPED else ceil_div(l.m, ws.tm) * ws.tm
    resident = l.r <= t.tr and ws.kind != LayoutKind.BCHW

    seqs = []
    mt_global = 0
    for mon_eff in blocks(l.m, use_m_on):
        m_tiles = range(mt_global, mt_global + ceil_div(mon_eff, ws.tm))
        wei_load = Transfer(Channel.WEI,
                            merge_runs([r for mt in m_tiles for nt in range(len(n_tiles))
                                        for r in wei.chunk_runs(mt, nt)]),
                            overlapped=True)
        if resident and ws.kind == LayoutKind.BHWC_REUSE:
            # channel-last reuse: both maps stream in whole, once per image
            prods = []
            for b in range(ws.batch):
                last = b == ws.batch - 1
                prods.append(Production([
                    ChunkStep([Transfer(Channel.IFM,
                                        act.tile_runs(b, 0, l.n, 0, l.r_in, 0, l.c_in),
                                        act.slot_words(0, l.n)),
                               Transfer(Channel.OFM,
                                        loss.tile_runs(b, 0, l.m, 0, l.r, 0, l.c),
                                        loss.slot_words(0, l.m))], 0)]))
                for mt in m_tiles:
                    chunks = [ChunkStep([wei_load] if last and mt == m_tiles[0]
                                        and nt == 0 else [], l.r * l.c * k2)
                              for nt in range(len(n_tiles))]
                    stores = [Transfer(Channel.OUT, wei.chunk_runs(mt, nt),
                                       wei.slot_words(mt, nt))
                              for nt in range(len(n_tiles))] if last else None
                    prods.append(Production(chunks, chunk_stores=stores))
            seqs.append(Sequence(prods, tail_start=False))
        elif resident:
            for mt in m_tiles:
                ch0, ch1 = mt * ws.tm, min(l.m, mt * ws.tm + ws.tm)
                prods = []
                for b in range(ws.batch):
                    last = b == ws.batch - 1
                    chunks = []
                    stores = [] if last else None
                    for nt, (n0, n1) in enumerate(n_tiles):
                        loads = [Transfer(Channel.IFM,
                                          act.tile_runs(b, n0, n1, 0, l.r_in, 0, l.c_in),
                                          act.slot_words(n0, n1))]
                        if nt == 0:
                            loads.append(Transfer(Channel.OFM,
                                                  loss.tile_runs(b, ch0, ch1, 0, l.r, 0, l.c),
                                                  loss.slot_words(ch0, ch1)))
                        if last and nt == 0 and mt == m_tiles[0]:
                            loads.append(wei_load)
                        chunks.append(ChunkStep(loads, l.r * l.c * k2))
                        if last:
                            stores.append(Transfer(Channel.OUT, wei.chunk_runs(mt, nt),
                                                   wei.slot_words(mt, nt)))
                    prods.append(Production(chunks, chunk_stores=stores))
                seqs.append(Sequence(prods, tail_start=False))
        else:
            prods = []
            for b in range(ws.batch):
                last = b == ws.batch - 1
                for pi, (mt, (nt, (n0, n1))) in enumerate(
                        (m, x) for m in m_tiles for x in enumerate(n_tiles)):
                    ch0, ch1 = mt * ws.tm, min(l.m, mt * ws.tm + ws.tm)
                    chunks = []
                    for (r0, r1) in row_tiles:
                        for (c0, c1) in col_tiles:
                            i0, i1 = fwd_window(r0, r1, l.k, l.s, l.pad, l.r_in)
                            j0, j1 = fwd_window(c0, c1, l.k, l.s, l.pad, l.c_in)
                            loads = [Transfer(Channel.IFM,
                                              act.tile_runs(b, n0, n1, i0, i1, j0, j1),
                                              act.slot_words(n0, n1)),
                                     Transfer(Channel.OFM,
                                              loss.tile_runs(b, ch0, ch1, r0, r1, c0, c1),
                                              loss.slot_words(ch0, ch1))]
                            if last and pi == 0 and r0 == 0 and c0 == 0:
                                loads.append(wei_load)
                            chunks.append(ChunkStep(loads, (r1 - r0) * (c1 - c0) * k2))
                    store = None
                    if last:
                        store = Transfer(Channel.OUT, wei.chunk_runs(mt, nt),
                                         wei.slot_words(mt, nt))
                    prods.append(Production(chunks, store=store))
            seqs.append(Sequence(prods, tail_start=False))
        mt_global += ceil_div(mon_eff, ws.tm)
    return seqs


WALKERS = {Process.FP: walk_fp, Process.BP: walk_bp, Process.WU: walk_wu}


def layer_sequences(process: Process, layer: LayerSpec, plan: TilePlan,
                    kind: str, batch: int, idx: int | None = None) -> list[Sequence]:
    if idx is None:
        if len(plan.entries) != 1:
            raise ValueError("idx required for multi-layer plans")
        idx = next(iter(plan.entries))
    ws = resolve_walk(layer, plan, idx, process, kind, batch)
    seqs = WALKERS[process](ws)
    for tr in iter_transfers(seqs):
        if kind == LayoutKind.BCHW:
            tr.per_run_start = True
        if tr.channel in (Channel.IFM, Channel.OFM):
            # feature tiles travel one descriptor at a time (double buffer)
            tr.fresh_start = True
    return seqs


def iter_transfers(seqs: list[Sequence]):
    """All transfers of a walk in bus order."""
    for seq in seqs:
        for prod in seq.productions:
            for chunk in prod.chunks:
                yield from chunk.loads
            if prod.chunk_stores:
                yield from prod.chunk_stores
            if prod.store is not None:
                yield prod.store


def trace_layer(process: Process, layer: LayerSpec, plan: TilePlan, kind: str,
                batch: int, idx: int | None = None) -> dict[Channel, list[Run]]:
    """Ordered word-address runs per DMA channel for one layer's pass."""
    traces: dict[Channel, list[Run]] = {c: [] for c in Channel}
    for tr in iter_transfers(layer_sequences(process, layer, plan, kind, batch, idx)):
        traces[tr.channel].extend(tr.runs)
    return traces


def trace_words(trace: list[Run]) -> int:
    return sum(l for _, l in trace)


def expand_trace(trace: list[Run]) -> np.ndarray:
    if not trace:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate([np.arange(s, s + l, dtype=np.int64) for s, l in trace])


# ------------------------------------------------------- network-level map


REGION_ORDER = ("act_in", "wei", "act", "a_hat", "loss", "pool_idx", "bn_par", "labels")


def region_table(net: NetworkSpec, plan: TilePlan, kind: str) -> dict[str, int]:
    """Region name -> word length for a whole training iteration."""
    regions: dict[str, int] = {}
    b = net.batch
    first = net.layers[0]
    regions["act_in/0"] = b * first.n * first.r_in * first.c_in
    for i, l in enumerate(net.layers):
        base = f"{i}"
        if l.weighted:
            regions[f"wei/{base}"] = l.m * l.n * l.k * l.k
        regions[f"act/{base}"] = b * l.m * l.r * l.c
        # loss at each layer's output; loss w.r.t. the network input is
        # never computed, so no region mirrors act_in
        regions[f"loss/{base}"] = b * l.m * l.r * l.c
        if l.kind is Kind.MAXPOOL:
            code_bits = max(2, (l.k * l.k - 1).bit_length())
            regions[f"pool_idx/{base}"] = ceil_div(b * l.m * l.r * l.c * code_bits, 32)
        if l.kind is Kind.BATCHNORM:
            regions[f"bn_par/{base}"] = 5 * l.m  # gamma, beta, lambda, E(X), V(X)
            regions[f"a_hat/{base}"] = b * l.m * l.r * l.c
    regions["labels"] = b
    return regions


@dataclass(frozen=True)
class StartEntry:
    layer: int
    process: str
    channel: str
    region: str
    start: int


def dma_start_table(net: NetworkSpec, plan: TilePlan, kind: str,
                    capacity: int | None = None) -> tuple[dict[str, tuple[int, int]], list[StartEntry]]:
    """Lay out all regions and derive per-(layer, process, channel) start
    offsets.  Offsets are deterministic for a given network and plan."""
    lengths = region_table(net, plan, kind)
    table: dict[str, tuple[int, int]] = {}
    off = 0
    for name, length in lengths.items():
        if capacity is not None and off + length > capacity:
            raise RegionOverflow(f"region {name!r} exceeds DRAM capacity")
        table[name] = (off, length)
        off += length

    def base(name: str) -> int:
        return table[name][0]

    entries: list[StartEntry] = []
    for i, l in enumerate(net.layers):
        act_in = "act_in/0" if i == 0 else f"act/{i - 1}"
        if not l.weighted:
            continue
        wei = f"wei/{i}"
        entries.append(StartEntry(i, "fp", "ifm", act_in, base(act_in)))
        entries.append(StartEntry(i, "fp", "wei", wei, base(wei)))
        entries.append(StartEntry(i, "fp", "out", f"act/{i}", base(f"act/{i}")))
        if i > 0:
            entries.append(StartEntry(i, "bp", "ifm", f"loss/{i}", base(f"loss/{i}")))
            entries.append(StartEntry(i, "bp", "wei", wei, base(wei)))
            entries.append(StartEntry(i, "bp", "out", f"loss/{i - 1}",
                                      base(f"loss/{i - 1}")))
        entries.append(StartEntry(i, "wu", "ifm", act_in, base(act_in)))
        entries.append(StartEntry(i, "wu", "ofm", f"loss/{i}", base(f"loss/{i}")))
        entries.append(StartEntry(i, "wu", "wei", wei, base(wei)))
        entries.append(StartEntry(i, "wu", "out", wei, base(wei)))
    return table, entries


# --------------------------------------------------------- reconstruction


def _axis_cover(extent: int, out: int, k: int, s: int, pad: int) -> np.ndarray:
    """Which stored positions some output window touches.  With k < s (or a
    trailing remainder) the loop nest legitimately skips positions."""
    y = np.arange(extent)
    o_min = np.maximum(0, -(-(y + pad - k + 1) // s))
    o_max = np.minimum(out - 1, (y + pad) // s)
    return o_min <= o_max


def required_mask(ws: WalkSpec, process: Process, channel: Channel) -> np.ndarray:
    """Elements the pass must read, independent of any layout or trace."""
    l = ws.layer
    if channel is Channel.WEI or process is Process.BP:
        # weights are always read whole; the backward pass consumes every
        # loss element (each output window overlaps the stored map)
        shape = _operand_geoms(ws, process)[channel][1]
        return np.ones(shape, dtype=bool)
    if channel is Channel.OFM:
        return np.ones(_operand_geoms(ws, process)[channel][1], dtype=bool)
    rows = _axis_cover(l.r_in, l.r, l.k, l.s, l.pad)
    cols = _axis_cover(l.c_in, l.c, l.k, l.s, l.pad)
    mask = np.zeros((ws.batch, l.n, l.r_in, l.c_in), dtype=bool)
    mask[:, :, rows[:, None] & cols[None, :]] = True
    return mask


def _operand_geoms(ws: WalkSpec, process: Process):
    """Load-channel operands: (channel, geom, tensor shape)."""
    l = ws.layer
    if process is Process.FP:
        return {
            Channel.IFM: (ws.feature_geom(l.n, l.r_in, l.c_in, ws.fp_m_on),
                          (ws.batch, l.n, l.r_in, l.c_in)),
            Channel.WEI: (ws.weight_geom(), (l.m, l.n, l.k, l.k)),
        }
    if process is Process.BP:
        return {
            Channel.IFM: (ws.feature_geom(l.m, l.r, l.c, ws.fp_m_on),
                          (ws.batch, l.m, l.r, l.c)),
            Channel.WEI: (ws.weight_geom(), (l.m, l.n, l.k, l.k)),
        }
    return {
        Channel.IFM: (ws.feature_geom(l.n, l.r_in, l.c_in, ws.fp_m_on),
                      (ws.batch, l.n, l.r_in, l.c_in)),
        Channel.OFM: (ws.feature_geom(l.m, l.r, l.c, ws.fp_m_on),
                      (ws.batch, l.m, l.r, l.c)),
        Channel.WEI: (ws.weight_geom(), (l.m, l.n, l.k, l.k)),
    }


def reconstruct_operands(layer: LayerSpec, plan: TilePlan, kind: str,
                         process: Process, batch: int, tensors: dict[Channel, np.ndarray],
                         idx: int | None = None,
                         corrupt_word: tuple[Channel, int] | None = None
                         ) -> dict[Channel, np.ndarray]:
    """Pack the given operand tensors, walk the pass's trace, and rebuild
    each operand from exactly the words the trace touches."""
    if idx is None:
        idx = next(iter(plan.entries))
    ws = resolve_walk(layer, plan, idx, process, kind, batch)
    geoms = _operand_geoms(ws, process)
    image = DramImage()
    inverses: dict[Channel, np.ndarray] = {}
    for chan, (geom, shape) in geoms.items():
        image.add_region(chan.value, geom.words())
        grid = geom.addr_grid()
        inv = np.empty(geom.words(), dtype=np.int64)
        inv[grid] = np.arange(geom.words())
        inverses[chan] = inv
        pack(tensors[chan].reshape(shape), geom, image, chan.value)
    if corrupt_word is not None:
        chan, w = corrupt_word
        off = image.region(chan.value)[0]
        image.words[off + w] += 1.0
    rebuilt = {chan: np.full(geoms[chan][0].words(), np.nan, dtype=np.float32)
               for chan in geoms}
    for tr in iter_transfers(WALKERS[process](ws)):
        if tr.channel not in geoms:
            continue
        off = image.region(tr.channel.value)[0]
        for start, length in tr.runs:
            a = np.arange(start, start + length)
            rebuilt[tr.channel][inverses[tr.channel][a]] = image.words[off + a]
    out = {}
    for chan, (geom, shape) in geoms.items():
        out[chan] = rebuilt[chan].reshape(shape)
    return out


def equivalence_check(layer: LayerSpec, plan: TilePlan, kind_a: str, kind_b: str,
                      process: Process, batch: int, seed: int = 0,
                      idx: int | None = None) -> tuple[bool, dict]:
    """True iff tile reads under both layouts reconstruct identical operand
    contents: every element the loop nest requires is read and matches the
    packed original, and nothing required is missed under either layout."""
    rng = np.random.default_rng(seed)
    if idx is None:
        idx = next(iter(plan.entries))
    ws = resolve_walk(layer, plan, idx, process, LayoutKind.RESHAPED, batch)
    tensors = {chan: rng.standard_normal(shape).astype(np.float32)
               for chan, (_, shape) in _operand_geoms(ws, process).items()}
    report: dict = {"process": process.value, "mismatches": {}}
    ok = True
    for kind in (kind_a, kind_b):
        rebuilt = reconstruct_operands(layer, plan, kind, process, batch,
                                       tensors, idx=idx)
        for chan, arr in rebuilt.items():
            ref = tensors[chan].reshape(arr.shape)
            covered = ~np.isnan(arr)
            need = required_mask(ws, process, chan)
            missing = int((need & ~covered).sum())
            if missing:
                ok = False
                report["mismatches"][f"{kind}/{chan.value}/missing"] = missing
            bad = int((arr[covered] != ref[covered]).sum())
            if bad:
                ok = False
                report["mismatches"][f"{kind}/{chan.value}"] = bad
    return ok, report


__all__ = [
    "LayoutKind", "Run", "merge_runs", "fwd_window", "bp_window",
    "FeatureGeom", "WeightGeom", "DramImage", "pack", "unpack",
    "Transfer", "ChunkStep", "Production", "Sequence", "WalkSpec",
    "resolve_walk", "walk_fp", "walk_bp", "walk_wu", "WALKERS",
    "layer_sequences", "iter_transfers", "trace_layer", "trace_words",
    "expand_trace", "region_table", "dma_start_table", "StartEntry",
    "required_mask", "reconstruct_operands", "equivalence_check",
]
