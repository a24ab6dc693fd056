"""Case-file ingestion: JSON schema, validation, and model construction.

A case file (schema version 1) bundles the network, device data, profiles
and the risk settings; the `risk` section either fixes one (eta1, eta2)
pair or lists a sweep.  Wind samples come inline, from a CSV with columns
bus, slot, k, value_MW, or from the seeded synthetic generator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import jsonschema

from . import wind_cvar
from .dispatch import DispatchCase, GeneratorSpec
from .flexload import FlexibleLoadSpec
from .netmodel import Bus, Line, NetworkModel

SCHEMA_VERSION = 1

_series = {"type": "array", "items": {"type": "number"}, "minItems": 1}

CASE_SCHEMA = {
    "type": "object",
    "required": ["version", "horizon", "network", "generators", "wind", "risk"],
    "properties": {
        "version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "horizon": {"type": "integer", "minimum": 1},
        "network": {
            "type": "object",
            "required": ["n_buses", "lines"],
            "properties": {
                "n_buses": {"type": "integer", "minimum": 1},
                "slack": {"type": "integer", "minimum": 1},
                "lines": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["from", "to", "reactance", "limit_mw"],
                        "properties": {
                            "from": {"type": "integer", "minimum": 1},
                            "to": {"type": "integer", "minimum": 1},
                            "reactance": {"type": "number", "exclusiveMinimum": 0},
                            "limit_mw": {"type": "number", "exclusiveMinimum": 0},
                        },
                    },
                },
            },
        },
        "generators": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["bus", "g_min", "g_max", "c2", "c1", "c0"],
                "properties": {
                    "bus": {"type": "integer", "minimum": 1},
                    "g_min": {"type": "number"},
                    "g_max": {"type": "number"},
                    "c2": {"type": "number", "minimum": 0},
                    "c1": {"type": "number"},
                    "c0": {"type": "number"},
                },
            },
        },
        "fixed_loads": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["bus", "series_mw"],
                "properties": {"bus": {"type": "integer", "minimum": 1},
                               "series_mw": _series},
            },
        },
        "wind": {
            "type": "object",
            "required": ["buses", "forecast_mw", "samples"],
            "properties": {
                "buses": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "forecast_mw": {"type": "array", "items": _series},
                "samples": {
                    "type": "object",
                    "minProperties": 1,
                    "maxProperties": 1,
                    "properties": {
                        "inline": {"type": "array"},
                        "csv": {"type": "string"},
                        "generator": {
                            "type": "object",
                            "required": ["k", "seed"],
                            "properties": {
                                "k": {"type": "integer", "minimum": 1},
                                "noise": {"type": "number", "minimum": 0},
                                "seed": {"type": "integer"},
                            },
                        },
                    },
                    "additionalProperties": False,
                },
            },
        },
        "flexible_loads": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["bus", "l_mwh", "u_mwh", "x_min_mw", "x_max_mw"],
                "properties": {"bus": {"type": "integer", "minimum": 1},
                               "l_mwh": _series, "u_mwh": _series,
                               "x_min_mw": _series, "x_max_mw": _series},
            },
        },
        "risk": {
            "type": "object",
            "required": ["beta"],
            "properties": {
                "beta": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "eta1": {"type": "number", "minimum": 0},
                "eta2": {"type": "number", "minimum": 0},
                "sweep": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["eta1", "eta2"],
                        "properties": {"eta1": {"type": "number", "minimum": 0},
                                       "eta2": {"type": "number", "minimum": 0}},
                    },
                },
            },
        },
    },
}


class CaseFileError(ValueError):
    """Schema or consistency violation, carrying the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class CaseSet:
    """Validated case file: one DispatchCase per risk setting."""

    name: str
    horizon: int
    cases: list[DispatchCase]
    doc: dict


def bundled_case_path(name: str) -> Path:
    """Path of a case file shipped inside the package (e.g. 'sixbus')."""
    return Path(resources.files("flexdispatch") / "cases" / f"{name}.json")


def load_case_file(path, seed_override: int | None = None) -> CaseSet:
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    return parse_case_doc(doc, base_dir=path.parent, seed_override=seed_override)


def parse_case_doc(doc: dict, base_dir: Path | None = None,
                   seed_override: int | None = None) -> CaseSet:
    try:
        jsonschema.validate(doc, CASE_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise CaseFileError(path, exc.message) from exc

    horizon = doc["horizon"]
    name = doc.get("name", "case")
    net_doc = doc["network"]
    n_buses = net_doc["n_buses"]

    def check_series(section: str, series, length=horizon):
        if len(series) != length:
            raise CaseFileError(section, f"series length {len(series)} != horizon {length}")

    def check_bus(section: str, bus: int):
        if not 1 <= bus <= n_buses:
            raise CaseFileError(section, f"bus {bus} outside 1..{n_buses}")

    gen_buses = [g["bus"] for g in doc["generators"]]
    fixed = doc.get("fixed_loads", [])
    fixed_buses = [d["bus"] for d in fixed]
    wind_buses = list(doc["wind"]["buses"])
    flex = doc.get("flexible_loads", [])
    flex_buses = [d["bus"] for d in flex]
    for section, buses in (("generators", gen_buses), ("fixed_loads", fixed_buses),
                           ("wind.buses", wind_buses), ("flexible_loads", flex_buses)):
        for b in buses:
            check_bus(section, b)
        if sorted(set(buses)) != buses:
            raise CaseFileError(section, "device buses must be strictly increasing "
                                         "(one aggregate device per bus)")

    buses = [Bus(i, has_generator=i in gen_buses, has_fixed_load=i in fixed_buses,
                 has_wind=i in wind_buses, has_flex_load=i in flex_buses)
             for i in range(1, n_buses + 1)]
    lines = [Line(ln["from"], ln["to"], ln["reactance"], ln["limit_mw"])
             for ln in net_doc["lines"]]
    network = NetworkModel(buses, lines, slack_bus=net_doc.get("slack", 1))

    generators = [GeneratorSpec(g["bus"], g["g_min"], g["g_max"],
                                g["c2"], g["c1"], g["c0"])
                  for g in doc["generators"]]
    for i, d in enumerate(fixed):
        check_series(f"fixed_loads.{i}.series_mw", d["series_mw"])
    fixed_loads = (np.array([d["series_mw"] for d in fixed], dtype=float)
                   if fixed else np.zeros((0, horizon)))

    wind_doc = doc["wind"]
    if len(wind_doc["forecast_mw"]) != len(wind_buses):
        raise CaseFileError("wind.forecast_mw", "one forecast series per wind bus")
    for i, series in enumerate(wind_doc["forecast_mw"]):
        check_series(f"wind.forecast_mw.{i}", series)
    forecast = (np.array(wind_doc["forecast_mw"], dtype=float)
                if wind_buses else np.zeros((0, horizon)))
    samples = _load_samples(wind_doc["samples"], forecast, wind_buses, horizon,
                            base_dir, seed_override)
    wind = wind_cvar.WindModel(buses=wind_buses, forecast=forecast, samples=samples)

    flexspecs = []
    for i, d in enumerate(flex):
        for key in ("l_mwh", "u_mwh", "x_min_mw", "x_max_mw"):
            check_series(f"flexible_loads.{i}.{key}", d[key])
        flexspecs.append(FlexibleLoadSpec(bus=d["bus"], l=d["l_mwh"], u=d["u_mwh"],
                                          x_min=d["x_min_mw"], x_max=d["x_max_mw"]))

    risk = doc["risk"]
    if "sweep" in risk:
        settings = [(s["eta1"], s["eta2"]) for s in risk["sweep"]]
    elif "eta1" in risk and "eta2" in risk:
        settings = [(risk["eta1"], risk["eta2"])]
    else:
        raise CaseFileError("risk", "need either eta1/eta2 or a sweep list")

    cases = [DispatchCase(network=network, generators=generators,
                          fixed_loads=fixed_loads, flexspecs=flexspecs,
                          wind=wind, eta1=e1, eta2=e2, beta=risk["beta"],
                          horizon=horizon, name=f"{name}-case{i + 1}")
             for i, (e1, e2) in enumerate(settings)]
    return CaseSet(name=name, horizon=horizon, cases=cases, doc=doc)


def _load_samples(spec: dict, forecast, wind_buses, horizon, base_dir,
                  seed_override):
    if not wind_buses:
        return []
    if "inline" in spec:
        raw = spec["inline"]
        if len(raw) != len(wind_buses):
            raise CaseFileError("wind.samples.inline", "one block per wind bus")
        out = []
        for i, per_bus in enumerate(raw):
            if len(per_bus) != horizon:
                raise CaseFileError(f"wind.samples.inline.{i}",
                                    f"need {horizon} slots, got {len(per_bus)}")
            out.append([np.asarray(chunk, dtype=float) for chunk in per_bus])
        return out
    if "csv" in spec:
        csv_path = Path(spec["csv"])
        if base_dir is not None and not csv_path.is_absolute():
            csv_path = base_dir / csv_path
        return wind_cvar.read_samples_csv(csv_path, wind_buses, horizon)
    gen = spec["generator"]
    seed = seed_override if seed_override is not None else gen["seed"]
    return wind_cvar.synthetic_samples(forecast, k=gen["k"],
                                       noise=gen.get("noise", 0.4), seed=seed)
