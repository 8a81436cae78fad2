"""Command line entry point: synth, train, eval, infer and bench.

Exit status is 0 on success, 2 for usage or configuration errors and 1 for
any other failure.
"""
import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from achelous.data.dataset import export_dataset, load_dataset
from achelous.data.formats import write_ppm
from achelous.data.synth import SceneSpec, generate_sample, generate_samples
from achelous.evaluation.bench import benchmark_latency
from achelous.evaluation.evaluate import evaluate_detection_request, evaluate_model, load_model, predict
from achelous.evaluation.visualize import render_panels
from achelous.training.trainer import run_training
from core.config import load_run_config, settings
from core.errors import AchelousError, ConfigError
from core.logger import AppLogger
from schemas.perception_schemas import DetectionEvalRequest, EvalReport

logger = AppLogger(__name__).get_logger()

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def cmd_synth(args) -> int:
    spec = SceneSpec(seed=args.seed, image_size=args.image_size, degradation=args.degradation)
    samples = generate_samples(spec, args.count, start=args.start)
    splits = export_dataset(samples, args.out)
    print(json.dumps({name: len(members) for name, members in splits.items()}))
    return EXIT_OK


def cmd_train(args) -> int:
    run = load_run_config(
        args.config,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        data_root=args.data_root,
        out_dir=args.out,
        zero_rvp=True if args.zero_rvp else None,
    )
    dataset = load_dataset(run.data_root)
    train = dataset.load(dataset.split("train"))
    val = dataset.load(dataset.split("val"))
    if not train:
        raise ConfigError(f"dataset {run.data_root} has an empty train split")
    found = train[0].image.shape[1]
    if found != run.image_size:
        raise ConfigError(f"image_size is {run.image_size} but dataset images are {found}px")
    result = run_training(run, train, val)
    print(json.dumps({"checkpoint": str(result.checkpoint), "log": str(result.log_path),
                      "figure": str(result.figure)}))
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.predictions:
        path = Path(args.predictions)
        if not path.is_file():
            raise ConfigError(f"predictions file not found: {path}")
        try:
            request = DetectionEvalRequest.model_validate_json(path.read_text(encoding="utf-8"))
        except ValidationError as e:
            raise ConfigError(f"malformed predictions file {path}: {e.error_count()} errors") from e
        metrics = evaluate_detection_request(request)
        output = metrics.model_dump_json(indent=2)
    else:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint or --predictions")
        model, run = load_model(args.checkpoint)
        dataset = load_dataset(args.data_root or run.data_root)
        samples = dataset.load(dataset.split(args.split))
        detection, segmentation = evaluate_model(model, samples, zero_rvp=args.zero_rvp)
        report = EvalReport(model=model.tag, split=args.split, samples=len(samples), zero_rvp=args.zero_rvp,
                            detection=detection, segmentation=segmentation)
        output = report.model_dump_json(indent=2)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(output, encoding="utf-8")
    print(output)
    return EXIT_OK


def cmd_infer(args) -> int:
    model, run = load_model(args.checkpoint)
    if args.data_root:
        sample = load_dataset(args.data_root)[args.index]
    else:
        spec = SceneSpec(seed=args.seed, image_size=run.image_size, degradation=args.degradation)
        sample = generate_sample(spec, args.index)
    prediction = predict(model, [sample], zero_rvp=args.zero_rvp, score_threshold=args.score_threshold)[0]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_ppm(out, render_panels(sample, prediction))
    if prediction.detections is not None:
        for line in prediction.detections.to_lines():
            print(line)
    logger.info(f"Wrote prediction panels for sample {sample.index} to {out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    sizes = [s.strip() for s in args.sizes.split(",") if s.strip()]
    report = benchmark_latency(sizes, image_size=args.image_size, warmup=args.warmup, runs=args.runs,
                               neck=args.neck, pointnet=args.pointnet, ablation=args.ablation,
                               out_dir=args.out, pin=not args.no_pin)
    print(report.model_dump_json(indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="achelous", description="Camera + radar panoptic perception toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="Generate and export a synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--start", type=int, default=0, help="First sample index")
    p.add_argument("--out", default=settings.DATA_ROOT)
    p.add_argument("--degradation", choices=("none", "dark", "fog", "droplet"), default="none")
    p.add_argument("--image-size", type=int, default=320)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("train", help="Train from a run config file")
    p.add_argument("--config", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--data-root")
    p.add_argument("--out")
    p.add_argument("--zero-rvp", action="store_true", help="Train the camera-only comparison model")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="Score a checkpoint on a split, or posted predictions")
    p.add_argument("--checkpoint")
    p.add_argument("--predictions", help="JSON file with predictions and ground truth")
    p.add_argument("--split", choices=("train", "val", "test"), default="val")
    p.add_argument("--data-root")
    p.add_argument("--zero-rvp", action="store_true", help="Evaluate with zeroed RVP maps")
    p.add_argument("--out", help="Also write the JSON report here")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("infer", help="Render five-panel predictions for one sample")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--data-root", help="Read the sample from a dataset instead of synthesizing it")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--degradation", choices=("none", "dark", "fog", "droplet"), default="none")
    p.add_argument("--zero-rvp", action="store_true")
    p.add_argument("--score-threshold", type=float, default=0.3)
    p.add_argument("--out", default="panels.ppm")
    p.set_defaults(handler=cmd_infer)

    p = sub.add_parser("bench", help="Unified vs standalone latency")
    p.add_argument("--sizes", default="s0,s1,s2")
    p.add_argument("--image-size", type=int, default=320)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--neck", choices=("gdf", "cdf"), default="gdf")
    p.add_argument("--pointnet", choices=("pn", "pn2"), default="pn")
    p.add_argument("--ablation", action="store_true", help="Add fusion and radar-conv ablation rows")
    p.add_argument("--no-pin", action="store_true", help="Do not pin the process to one core")
    p.add_argument("--out", default=settings.OUT_DIR)
    p.set_defaults(handler=cmd_bench)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    try:
        return args.handler(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except (AchelousError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_FAILURE
    except Exception as e:
        logger.exception(f"{args.command} failed unexpectedly: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
