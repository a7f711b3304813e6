"""Real-time-factor benchmark: wall-clock cost of a fixed virtual duration.

Runs the blueprint loop for 60 virtual seconds with 1..n UAV receivers and
no rescue pauses, recording wall-clock and per-module step time. A separate
helper times the tracer under both kernel backends (numba vs numpy).
"""

from __future__ import annotations

import csv
import json
import statistics
import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from . import orchestrator as orch
from .ai import Policy
from .blueprint import CommsModule, MobilityModule, PolicyModule, offset_plan
from .geometry import Scene, trace_paths
from .mobility import TrajectoryPlan
from .phy import CommsConfig

CSV_FIELDS = ("n_uavs", "Tp_s", "Tv_s", "rtf", "t_mobility_s", "t_comms_s", "t_ai_s")


def rtf(tp_s: float, tv_s: float) -> float:
    """Real-time factor: wall-clock seconds per virtual second."""
    if tv_s <= 0:
        raise ValueError("virtual duration must be positive")
    return tp_s / tv_s


@dataclass
class TimingReport:
    n_uavs: int
    n_snapshots: int
    tp_s: float
    tv_s: float
    t_mobility_s: float
    t_comms_s: float
    t_ai_s: float
    error: str | None = None

    @property
    def rtf(self) -> float:
        return rtf(self.tp_s, self.tv_s)

    def to_dict(self) -> dict:
        return {
            "n_uavs": self.n_uavs,
            "n_snapshots": self.n_snapshots,
            "Tp_s": self.tp_s,
            "Tv_s": self.tv_s,
            "rtf": self.rtf,
            "t_mobility_s": self.t_mobility_s,
            "t_comms_s": self.t_comms_s,
            "t_ai_s": self.t_ai_s,
            "error": self.error,
        }


def run_benchmark(
    scene: Scene,
    uav_counts,
    virtual_seconds: float = 60.0,
    sampling_interval: float = 0.5,
    base_plan: TrajectoryPlan | None = None,
    comms_cfg: CommsConfig | None = None,
    repetitions: int = 3,
    seed: int = 0,
) -> list:
    """One report per UAV count; Tp is the median of `repetitions` runs."""
    if not uav_counts:
        raise ValueError("uav_counts must be non-empty")
    n_snapshots = int(round(virtual_seconds / sampling_interval))
    if abs(n_snapshots * sampling_interval - virtual_seconds) > 1e-12:
        raise ValueError("virtual_seconds must be a multiple of the sampling interval")
    if base_plan is None:
        base_plan = TrajectoryPlan(start=(190.0, 325.0, 40.0), end=(521.0, 325.0, 40.0))
    reports = []
    for count in uav_counts:
        tp, tm, tc, ta = [], [], [], []
        error = None
        for rep in range(repetitions):
            plans = {
                f"uav{i}": offset_plan(base_plan, 3.0 * (i - (count - 1) / 2.0))
                for i in range(count)
            }
            mobility = MobilityModule(plans, sampling_interval)
            comms = CommsModule(scene, comms_cfg or CommsConfig())
            ai_mod = PolicyModule(
                Policy(kind="random"), comms, np.random.default_rng((seed, count, rep))
            )
            cfg = orch.EpisodeConfig(
                n_snapshots=n_snapshots,
                sampling_interval=sampling_interval,
                category=orch.ALL_IN_LOOP,
                seed=seed,
            )
            try:
                log = orch.run_episode(cfg, [mobility, comms, ai_mod])
            except orch.EpisodeAbort as exc:
                error = str(exc)
                break
            tp.append(log.wall_clock_s)
            tm.append(log.timings["3D"])
            tc.append(log.timings["communications"])
            ta.append(log.timings["ai"])
        if error is not None:
            reports.append(
                TimingReport(count, n_snapshots, float("nan"), n_snapshots * sampling_interval,
                             float("nan"), float("nan"), float("nan"), error=error)
            )
            continue
        reports.append(
            TimingReport(
                n_uavs=count,
                n_snapshots=n_snapshots,
                tp_s=statistics.median(tp),
                tv_s=n_snapshots * sampling_interval,
                t_mobility_s=statistics.median(tm),
                t_comms_s=statistics.median(tc),
                t_ai_s=statistics.median(ta),
            )
        )
    return reports


def write_csv(reports, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for r in reports:
            d = r.to_dict()
            writer.writerow([d[k] for k in CSV_FIELDS])


def write_json(reports, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=2)


def compare_backends(scene: Scene, n_points: int = 60, repeats: int = 3) -> dict:
    """Time the tracer across backends on a line of receiver positions.

    Returns {backend: median seconds for n_points traced positions}. The
    numba figure excludes JIT compilation (one warm-up call).
    """
    xs = np.linspace(scene.length * 0.25, scene.length * 0.75, n_points)
    points = [(float(x), scene.width / 2.0, 40.0) for x in xs]
    results = {}
    previous = kernels.active_backend()
    try:
        for backend in kernels.available_backends():
            kernels.set_backend(backend)
            trace_paths(scene, scene.tx.position, points[0])  # warm-up / JIT
            times = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                for p in points:
                    trace_paths(scene, scene.tx.position, p)
                times.append(time.perf_counter() - t0)
            results[backend] = statistics.median(times)
    finally:
        kernels.set_backend(previous)
    return results
