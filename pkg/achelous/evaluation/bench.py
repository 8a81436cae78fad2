"""Single-threaded latency of the unified network against its single-task trims.

Each configuration is timed as the five-task forward and as four standalone
networks (detector, target/drivable segmentation, waterline segmentation,
point network) run one after another; the report carries their sum and max.
"""
import csv
import logging
import os
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from threadpoolctl import threadpool_info, threadpool_limits

from achelous.autograd import functional as F
from achelous.autograd.nn import manual_seed
from achelous.autograd.tensor import Tensor, default_dtype, no_grad
from achelous.evaluation.visualize import plot_latency
from achelous.models.achelous_net import AchelousNet
from achelous.models.config import ModelConfig
from core.config import TASK_NAMES, settings
from schemas.perception_schemas import BenchReport, BenchRow

logger = logging.getLogger(__name__)

STABILITY_LIMIT = 0.15


@contextmanager
def single_core(pin: bool = True, threads: Optional[int] = None) -> Iterator[Tuple[Optional[int], int]]:
    """Cap BLAS/OpenMP pools at ``threads`` and optionally pin to one CPU.

    Yields (cpu, threads in force); the previous CPU set is restored on exit.
    """
    threads = threads or settings.NUM_THREADS
    previous = os.sched_getaffinity(0) if pin and hasattr(os, "sched_setaffinity") else None
    cpu = None
    try:
        if previous:
            cpu = min(previous)
            os.sched_setaffinity(0, {cpu})
        with threadpool_limits(limits=threads):
            pools = [info["num_threads"] for info in threadpool_info()]
            yield cpu, max(pools, default=threads)
    finally:
        if previous:
            os.sched_setaffinity(0, previous)


def synthetic_inputs(image_size: int, num_points: int, seed: int = 0) -> Dict[str, object]:
    rng = np.random.default_rng(seed)
    dtype = default_dtype()
    sparse = rng.uniform(size=(1, 1, image_size, image_size)) < 0.02
    return {
        "image": Tensor(rng.uniform(0, 1, (1, 3, image_size, image_size)), dtype=dtype),
        "rvp": Tensor(rng.uniform(0, 1, (1, 3, image_size, image_size)) * sparse, dtype=dtype),
        "points": Tensor(rng.normal(0, 10, (1, num_points, 5)), dtype=dtype),
        "point_mask": np.ones((1, num_points), dtype=bool),
    }


def time_forward(fn: Callable[[], object], warmup: int = 10, runs: int = 100) -> np.ndarray:
    """Wall-clock milliseconds per call on the monotonic performance counter, after warmup calls."""
    for _ in range(warmup):
        fn()
    samples = np.empty(runs)
    for i in range(runs):
        start = time.perf_counter_ns()
        fn()
        samples[i] = (time.perf_counter_ns() - start) / 1e6
    return samples


def measure(name: str, kind: str, model: AchelousNet, inputs: Dict[str, object], warmup: int, runs: int) -> BenchRow:
    model.eval()

    def forward():
        with no_grad():
            return model(**inputs)

    with F.count_flops() as macs:
        forward()
    timings = time_forward(forward, warmup, runs)
    mean, std = float(timings.mean()), float(timings.std())
    unstable = mean > 0 and std / mean >= STABILITY_LIMIT
    if unstable:
        logger.warning(f"{name}: unstable timing, std/mean={std / mean:.3f}")
    return BenchRow(name=name, kind=kind, mean_ms=mean, std_ms=std, runs=runs,
                    parameters=model.num_parameters(), gflops=macs[0] / 1e9, unstable=unstable)


def bench_config(config: ModelConfig, inputs: Dict[str, object], warmup: int, runs: int, seed: int = 0) -> List[BenchRow]:
    """Unified row, one row per standalone trim, then the standalone sum and max."""
    manual_seed(seed)
    rows = [measure(f"{config.tag}/unified", "unified", AchelousNet(config), inputs, warmup, runs)]
    standalone = []
    for task in TASK_NAMES:
        manual_seed(seed)
        standalone.append(measure(f"{config.tag}/{task}", "standalone", AchelousNet(config, tasks=(task,)),
                                  inputs, warmup, runs))
    rows.extend(standalone)
    total_std = float(np.sqrt(sum(r.std_ms ** 2 for r in standalone)))
    rows.append(BenchRow(
        name=f"{config.tag}/standalone_sum", kind="standalone_sum",
        mean_ms=sum(r.mean_ms for r in standalone), std_ms=total_std, runs=runs,
        parameters=sum(r.parameters for r in standalone), gflops=sum(r.gflops for r in standalone),
        unstable=any(r.unstable for r in standalone),
    ))
    slowest = max(standalone, key=lambda r: r.mean_ms)
    rows.append(slowest.model_copy(update={"name": f"{config.tag}/standalone_max", "kind": "standalone_max"}))
    return rows


def ablation_variants(size: str, neck: str, pointnet: str) -> List[Tuple[str, ModelConfig]]:
    return [
        ("fusion=fpn", ModelConfig.for_size(size, neck=neck, pointnet=pointnet, fusion="fpn")),
        ("fusion=backbone_fpn", ModelConfig.for_size(size, neck=neck, pointnet=pointnet, fusion="backbone_fpn")),
        ("radar_conv=radar_conv", ModelConfig.for_size(size, neck=neck, pointnet=pointnet, radar_conv="radar_conv")),
        ("radar_conv=plain_conv", ModelConfig.for_size(size, neck=neck, pointnet=pointnet, radar_conv="plain_conv")),
    ]


def write_report(report: BenchReport, out_dir) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "bench.csv"
    fields = list(BenchRow.model_fields)
    with open(csv_path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=fields)
        writer.writeheader()
        for row in report.rows:
            writer.writerow(row.model_dump())
    json_path = out_dir / "bench.json"
    json_path.write_text(report.model_dump_json(indent=2))
    figure = plot_latency([r.name for r in report.rows], [r.mean_ms for r in report.rows],
                          [r.std_ms for r in report.rows], out_dir / "bench.svg")
    return {"csv": csv_path, "json": json_path, "figure": figure}


def benchmark_latency(
    sizes: Sequence[str] = ("s0",),
    image_size: int = 320,
    warmup: int = 10,
    runs: int = 100,
    neck: str = "gdf",
    pointnet: str = "pn",
    num_points: int = 128,
    ablation: bool = False,
    out_dir=None,
    seed: int = 0,
    pin: bool = True,
    threads: Optional[int] = None,
) -> BenchReport:
    inputs = synthetic_inputs(image_size, num_points, seed)
    with single_core(pin, threads) as (cpu, in_force):
        logger.info(f"Benchmarking sizes={list(sizes)} at {image_size}px, {warmup} warmup + {runs} runs, "
                    f"cpu={cpu}, threads={in_force}")
        report = BenchReport(image_size=image_size, threads=in_force, warmup=warmup, runs=runs)
        for size in sizes:
            config = ModelConfig.for_size(size, neck=neck, pointnet=pointnet)
            report.rows.extend(bench_config(config, inputs, warmup, runs, seed))
        if ablation:
            for label, config in ablation_variants(sizes[0], neck, pointnet):
                manual_seed(seed)
                report.rows.append(measure(f"ablation/{label}", "ablation", AchelousNet(config), inputs, warmup, runs))
    for row in report.rows:
        logger.info(f"{row.name}: {row.mean_ms:.2f} +- {row.std_ms:.2f} ms, "
                    f"{row.parameters} params, {row.gflops:.3f} GMACs")
    if out_dir is not None:
        write_report(report, out_dir)
    return report
