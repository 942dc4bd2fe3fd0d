"""Command-line front end.

Subcommands: schedule | estimate | simulate | train | layout-dump.
Exit codes: 0 ok, 2 config error, 3 infeasible, 4 internal invariant
violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import config, datasets, dma, engine, layout, perf, sched
from .errors import ConfigError, Infeasible, PlanMismatch
from .plan import Process

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_INTERNAL = 4


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _validate_report(doc: dict) -> None:
    # hard failure on malformed internal state, never a silent partial report
    for key in ("batch", "total_analytic", "rows"):
        if key not in doc:
            raise AssertionError(f"report missing {key!r}")
    for row in doc["rows"]:
        if not {"layer", "process"} <= set(row):
            raise AssertionError("report row missing layer/process")
        for field in ("analytic", "simulated"):
            v = row.get(field)
            if v is not None and (not isinstance(v, int) or v < 0):
                raise AssertionError(f"report row has bad {field}: {v!r}")


def _write_report(doc: dict, out: Path, stem: str, formats: list[str]) -> None:
    _validate_report(doc)
    if "json" in formats:
        (out / f"{stem}.json").write_text(json.dumps(doc, indent=2) + "\n")
    if "csv" in formats:
        with open(out / f"{stem}.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["layer", "label", "process", "analytic", "simulated",
                        "deviation", "estimated"])
            for r in doc["rows"]:
                w.writerow([r["layer"], r["label"], r["process"], r["analytic"],
                            r.get("simulated"), r.get("deviation"),
                            r.get("estimated", False)])


def cmd_schedule(args) -> int:
    net = config.load_network(args.net, args.batch)
    dev = config.load_device(args.device)
    plan, usage = sched.schedule(net, dev, args.batch)
    table, entries = layout.dma_start_table(net, plan, layout.LayoutKind.RESHAPED)
    out = _out_dir(args)
    doc = config.plan_to_dict(plan, extra={
        "banks": usage.to_dict(),
        "start_table": [vars(e) for e in entries],
    })
    (out / "plan.json").write_text(json.dumps(doc, indent=2) + "\n")
    rep = perf.network_report(net, plan, dev, args.batch)
    lines = [f"network {net.name}: Tm=Tn={plan.tm}",
             f"resources: {usage.to_dict()}",
             f"predicted total cycles (batch {rep.batch}): {rep.total_analytic}"]
    for i in sorted(plan.entries):
        e = plan.entries[i]
        lines.append(f"  layer {i} {net.layers[i].label()}: [Tr,Tc,M_on]=[{e.tr},{e.tc},{e.m_on}]")
    (out / "schedule_summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def _report_with_sim(net, plan, dev, batch, kind):
    rep = perf.network_report(net, plan, dev, batch)
    hist_rows = []
    for row in rep.rows:
        if row.process == Process.BP.value and row.layer == 0:
            continue  # loss is never propagated past the first layer
        res = dma.simulate_layer(Process(row.process), net.layers[row.layer],
                                 plan, kind, dev, batch, idx=row.layer)
        row.simulated = res.cycles
        row.fill_deviation()
        for chan, lens in res.burst_lengths.items():
            for length, count in sorted(lens.items()):
                hist_rows.append([row.layer, row.process, chan, length, count])
    # non-tiled layers move their maps once per pass; flagged as estimates
    for i, l in enumerate(net.layers):
        if l.weighted:
            continue
        for proc in Process:
            est = dma.stream_estimate(l, proc, dev, batch)
            if est:
                rep.rows.append(perf.ReportRow(i, l.label(), proc.value, None,
                                               simulated=est, estimated=True))
    rep.rows.sort(key=lambda r: (r.layer, r.process))
    rep.total_simulated = sum(r.simulated for r in rep.rows
                              if r.simulated and not r.estimated)
    return rep, hist_rows


def cmd_estimate(args) -> int:
    net = config.load_network(args.net, args.batch)
    dev = config.load_device(args.device)
    plan = config.load_plan(args.plan)
    rep = perf.network_report(net, plan, dev, args.batch)
    out = _out_dir(args)
    doc = rep.to_dict()
    if args.audit:
        audit = {}
        for i in sorted(plan.entries):
            for proc in Process:
                tile = plan.tile_for(i, net.layers[i], proc)
                audit[f"{i}/{proc.value}"] = perf.audit_values(
                    net.layers[i], tile, plan, dev, proc)
        doc["audit"] = audit
    _write_report(doc, out, "estimate", args.format)
    print(f"total analytic cycles: {rep.total_analytic}  "
          f"throughput: {rep.gflops:.2f} GFLOPS")
    return EXIT_OK


def cmd_simulate(args) -> int:
    net = config.load_network(args.net, args.batch)
    dev = config.load_device(args.device)
    plan = config.load_plan(args.plan)
    kind = layout.LayoutKind.parse(args.layout)
    rep, hist_rows = _report_with_sim(net, plan, dev, args.batch or net.batch, kind)
    out = _out_dir(args)
    _write_report(rep.to_dict(), out, f"simulate_{kind}", args.format)
    with open(out / f"bursts_{kind}.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["layer", "process", "channel", "burst_length", "count"])
        w.writerows(hist_rows)
    worst = max((r.deviation for r in rep.rows if r.deviation is not None),
                default=0.0)
    print(f"layout {kind}: simulated total {rep.total_simulated} cycles, "
          f"worst deviation vs analytic {worst * 100:.2f}%")
    return EXIT_OK


def cmd_train(args) -> int:
    net = config.load_network(args.net, args.batch)
    engine_params = engine.init_params(net, seed=args.seed)
    if args.data == "synthetic":
        batches = datasets.synthetic_batches(net, args.steps, args.seed)
    else:
        batches = datasets.file_batches(args.data, net, args.steps, args.seed)
    out = _out_dir(args)
    losses = []
    for step, (x, y) in enumerate(batches):
        loss, engine_params = engine.train_minibatch(net, engine_params, x, y)
        losses.append(loss)
        if args.log_every and step % args.log_every == 0:
            print(f"step {step}: loss {loss:.6f}")
    with open(out / "loss.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "loss"])
        for i, v in enumerate(losses):
            w.writerow([i, f"{v:.8f}"])
    engine.save_checkpoint(out / "checkpoint.bin", engine_params)
    print(f"trained {len(losses)} steps: first loss {losses[0]:.4f}, "
          f"last loss {losses[-1]:.4f}")
    return EXIT_OK


def cmd_layout_dump(args) -> int:
    net = config.load_network(args.net, args.batch)
    plan = config.load_plan(args.plan)
    kind = layout.LayoutKind.parse(args.layout)
    table, entries = layout.dma_start_table(net, plan, kind)
    bases = {(e.layer, e.process, e.channel): e.start for e in entries}
    out = _out_dir(args)
    with open(out / f"layout_{kind}.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["layer", "process", "channel", "burst_index",
                    "start_word", "length"])
        for i in sorted(plan.entries):
            for proc in Process:
                if proc is Process.BP and i == 0:
                    continue
                traces = layout.trace_layer(proc, net.layers[i], plan, kind,
                                            net.batch, idx=i)
                for chan, runs in traces.items():
                    if not runs:
                        continue
                    base = bases.get((i, proc.value, chan.value), 0)
                    for bi, burst in enumerate(dma.split_bursts(runs)):
                        w.writerow([i, proc.value, chan.value, bi,
                                    base + burst.start, burst.length])
    print(f"wrote layout_{kind}.csv ({len(table)} regions)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trainsim")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, plan=False, device=False, lay=False):
        p.add_argument("--net", required=True, help="network config path or preset")
        p.add_argument("--batch", type=int, default=None)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="out")
        p.add_argument("--format", nargs="+", default=["json", "csv"],
                       choices=["json", "csv"])
        if device:
            p.add_argument("--device", required=True, help="device config path or preset")
        if plan:
            p.add_argument("--plan", required=True, help="plan file path or preset")
        if lay:
            p.add_argument("--layout", default="reshaped",
                           help="bchw | bhwc | reshaped")

    p = sub.add_parser("schedule", help="pick tile plan and buffers for a device")
    common(p, device=True)
    p.set_defaults(fn=cmd_schedule)

    p = sub.add_parser("estimate", help="closed-form latency report")
    common(p, plan=True, device=True)
    p.add_argument("--audit", action="store_true",
                   help="include per-tile intermediate values")
    p.set_defaults(fn=cmd_estimate)

    p = sub.add_parser("simulate", help="trace-driven latency and burst report")
    common(p, plan=True, device=True, lay=True)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("train", help="run the reference training engine")
    common(p)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--data", default="synthetic", help="'synthetic' or raw file path")
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("layout-dump", help="burst table for external inspection")
    common(p, plan=True, lay=True)
    p.set_defaults(fn=cmd_layout_dump)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Infeasible as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except PlanMismatch as e:
        print(f"plan mismatch: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
