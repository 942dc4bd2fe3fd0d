"""JSON config ingestion for networks, devices and tile plans.

Schemas are documented in the README.  Named presets ship with the package
under trainsim/presets/ and can be referenced anywhere a path is accepted.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .errors import ConfigError, InvalidLayer, ShapeMismatch
from .model import DeviceSpec, Kind, LayerSpec, NetworkSpec, validate_and_infer
from .plan import PlanEntry, TilePlan

_LAYER_KEYS = {"kind", "m", "n", "r", "c", "k", "s", "pad", "r_in", "c_in"}


def _read_json(path_or_name: str | Path, preset_kind: str | None = None) -> dict:
    p = Path(path_or_name)
    if not p.exists() and preset_kind is not None and "/" not in str(path_or_name):
        res = resources.files("trainsim").joinpath("presets", f"{path_or_name}.json")
        if res.is_file():
            return json.loads(res.read_text())
        raise ConfigError(f"no file or {preset_kind} preset named {path_or_name!r}")
    try:
        return json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"bad JSON in {p}: {e}") from None


def load_network(path_or_name: str | Path, batch: int | None = None) -> NetworkSpec:
    doc = _read_json(path_or_name, "network")
    try:
        layers = []
        for entry in doc["layers"]:
            unknown = set(entry) - _LAYER_KEYS
            if unknown:
                raise ConfigError(f"unknown layer keys {sorted(unknown)}")
            kind = Kind(entry["kind"])
            layers.append(LayerSpec(
                kind=kind,
                m=int(entry.get("m", 0)), n=int(entry.get("n", 0)),
                r=int(entry.get("r", 0)), c=int(entry.get("c", 0)),
                k=int(entry.get("k", 1)), s=int(entry.get("s", 1)),
                pad=int(entry.get("pad", 0)),
                r_in=entry.get("r_in"), c_in=entry.get("c_in"),
            ))
        net = NetworkSpec(
            layers=tuple(layers),
            batch=int(batch if batch is not None else doc.get("batch", 1)),
            learning_rate=float(doc.get("learning_rate", 0.01)),
            name=str(doc.get("name", Path(str(path_or_name)).stem)),
        )
    except (KeyError, ValueError, TypeError) as e:
        raise ConfigError(f"bad network config {path_or_name}: {e}") from None
    try:
        return validate_and_infer(net)
    except (InvalidLayer, ShapeMismatch) as e:
        raise ConfigError(f"invalid network {path_or_name}: {e}") from None


def load_device(path_or_name: str | Path) -> DeviceSpec:
    doc = _read_json(path_or_name, "device")
    try:
        return DeviceSpec(**doc)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad device config {path_or_name}: {e}") from None


def load_plan(path_or_name: str | Path) -> TilePlan:
    doc = _read_json(path_or_name, "plan")
    try:
        entries = {}
        for e in doc["layers"]:
            entries[int(e["layer"])] = PlanEntry(
                tr=int(e["tr"]), tc=int(e["tc"]), m_on=int(e["m_on"]),
                bp_tr=e.get("bp_tr"), bp_tc=e.get("bp_tc"), bp_m_on=e.get("bp_m_on"),
                wu_tr=e.get("wu_tr"), wu_tc=e.get("wu_tc"), wu_m_on=e.get("wu_m_on"),
            )
        return TilePlan(tm=int(doc["tm"]), tn=int(doc["tn"]), entries=entries)
    except (KeyError, ValueError, TypeError) as e:
        raise ConfigError(f"bad plan config {path_or_name}: {e}") from None


def plan_to_dict(plan: TilePlan, extra: dict | None = None) -> dict:
    doc: dict = {"tm": plan.tm, "tn": plan.tn, "layers": []}
    for idx in sorted(plan.entries):
        e = plan.entries[idx]
        row: dict = {"layer": idx, "tr": e.tr, "tc": e.tc, "m_on": e.m_on}
        for k in ("bp_tr", "bp_tc", "bp_m_on", "wu_tr", "wu_tc", "wu_m_on"):
            v = getattr(e, k)
            if v is not None:
                row[k] = v
        doc["layers"].append(row)
    if extra:
        doc.update(extra)
    return doc


__all__ = ["load_network", "load_device", "load_plan", "plan_to_dict"]
