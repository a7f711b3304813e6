"""Run configuration: JSON loading, defaults, seed substreams and manifests.

Every piece of randomness in a run derives from one 64-bit master seed via
named substreams, so a (config, seed) pair pins the entire pipeline.
"""

from __future__ import annotations

import json
import zlib
from importlib import resources
from pathlib import Path

import numpy as np

from .geometry import Scene
from .mobility import Corridor, TrajectoryPlan, random_waypoints
from .phy import CommsConfig, UpaConfig


def stream_seed(master_seed: int, *names) -> tuple:
    """Entropy tuple for a named substream of the master seed."""
    parts = [int(master_seed) & 0xFFFFFFFFFFFFFFFF]
    for name in names:
        if isinstance(name, int):
            parts.append(name & 0xFFFFFFFF)
        else:
            parts.append(zlib.crc32(str(name).encode("utf-8")))
    return tuple(parts)


def rng_for(master_seed: int, *names) -> np.random.Generator:
    return np.random.default_rng(stream_seed(master_seed, *names))


def _data_text(name: str) -> str:
    return resources.files("skycell.data").joinpath(name).read_text(encoding="utf-8")


def default_config() -> dict:
    return json.loads(_data_text("default_config.json"))


def default_scene() -> Scene:
    return Scene.from_dict(json.loads(_data_text("urban_canyon.json")))


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path=None) -> dict:
    """Shipped defaults, deep-merged with the user's JSON when given."""
    cfg = default_config()
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = _merge(cfg, json.load(fh))
    return cfg


def load_scene(cfg: dict) -> Scene:
    source = cfg.get("scene", "builtin")
    if isinstance(source, dict):
        return Scene.from_dict(source)
    if source in ("builtin", None):
        return default_scene()
    return Scene.from_file(source)


def comms_config(cfg: dict) -> CommsConfig:
    c = cfg.get("comms", {})
    return CommsConfig(
        tx_power_dbm=float(c.get("tx_power_dbm", 30.0)),
        bandwidth_hz=float(c.get("bandwidth_hz", 1e8)),
        noise_figure_db=float(c.get("noise_figure_db", 7.0)),
        max_throughput_mbps=float(c.get("max_throughput_mbps", 90.0)),
        carrier_hz=float(c.get("carrier_hz", 4e10)),
        tx_upa=UpaConfig(*c.get("tx_array", (8, 8)), spacing=float(c.get("spacing_wl", 0.5))),
        rx_upa=UpaConfig(*c.get("rx_array", (2, 2)), spacing=float(c.get("spacing_wl", 0.5))),
        rx_azimuth_deg=float(c.get("rx_azimuth_deg", 90.0)),
        rx_downtilt_deg=float(c.get("rx_downtilt_deg", -45.0)),
    )


def base_route(cfg: dict) -> TrajectoryPlan:
    m = cfg.get("mobility", {})
    route = m.get("route", {})
    return TrajectoryPlan(
        start=tuple(route.get("start", (190.0, 325.0, 40.0))),
        end=tuple(route.get("end", (521.0, 325.0, 40.0))),
        waypoints=tuple(tuple(w) for w in route.get("waypoints", ())),
        speed_mps=float(route.get("speed_mps", 5.0)),
    )


def seeded_route(cfg: dict, seed_entropy) -> TrajectoryPlan:
    """Base A->B route with seeded random waypoints inside the corridor."""
    m = cfg.get("mobility", {})
    base = base_route(cfg)
    corridor = Corridor(
        start=base.start,
        end=base.end,
        half_width=float(m.get("corridor_half_width", 30.0)),
    )
    plan = random_waypoints(seed_entropy, corridor, k=int(m.get("n_waypoints", 5)))
    return TrajectoryPlan(
        start=plan.start, end=plan.end, waypoints=plan.waypoints, speed_mps=base.speed_mps
    )


def write_manifest(out_dir: Path, command: str, seed: int, cfg: dict, extra: dict = None) -> None:
    doc = {"command": command, "seed": seed, "config": cfg}
    if extra:
        doc.update(extra)
    with open(Path(out_dir) / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
