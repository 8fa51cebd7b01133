import argparse
import logging
import os
import sys

# Add project root to path for imports
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from dotenv import load_dotenv

from core.config import RunConfig
from core.errors import DrcError, UsageError
from core.processor import WORKERS_ENV, Processor, resolve_workers
from pipelines import (CoolingPipeline, FitPipeline, ResonancesPipeline, SpectrumPipeline,
                       ThermometryPipeline)

logger = logging.getLogger("DrcSim")

PIPELINE_MAP = {
    'resonances': ResonancesPipeline,
    'cool': CoolingPipeline,
    'spectrum': SpectrumPipeline,
    'fit': FitPipeline,
    'thermometry': ThermometryPipeline,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drc-sim",
                                     description="Degenerate Raman sideband cooling simulator")
    parser.add_argument("--config", default="config.yaml", help="Path to config.yaml")
    parser.add_argument("--seed", type=int, help="Master RNG seed (overrides config)")
    parser.add_argument("--out", help="Output directory (overrides config)")
    parser.add_argument("--workers", type=int, help=f"Worker processes (fallback: ${WORKERS_ENV}, then 1)")
    parser.add_argument("--print-config", action="store_true", help="Print the effective configuration and exit")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")

    sub = parser.add_subparsers(dest="command")
    resonances = sub.add_parser("resonances", help="Survival versus offset field")
    resonances.add_argument("--laser-scan", action="store_true",
                            help="Also scan laser detuning and intensity (laser_scan.csv)")

    cool = sub.add_parser("cool", help="Lindblad cooling trajectory and trap lifetimes")
    cool.add_argument("--dump-operators", action="store_true", help="Write the Hamiltonian as triplets")

    spectrum = sub.add_parser("spectrum", help="Sideband spectrum (synth or click-stream pipeline)")
    spectrum.add_argument("--mode", help="synth | pipeline (default from config)")
    spectrum.add_argument("--realizations", type=int, help="Click-stream realizations (pipeline mode)")

    fit = sub.add_parser("fit", help="Fit the sideband model to a PSD")
    fit.add_argument("psd_file", nargs="?", help="PSD CSV (default: <out>/psd.csv)")

    thermometry = sub.add_parser("thermometry", help="Sideband-ratio thermometry of a PSD")
    thermometry.add_argument("psd_file", nargs="?", help="PSD CSV (default: <out>/psd.csv)")
    thermometry.add_argument("--half-width-khz", type=float, help="One band half-width for every axis (default: config, else per axis from the sideband widths)")
    return parser


def run(args: argparse.Namespace) -> int:
    config = RunConfig.from_file(args.config).override(seed=args.seed, out_dir=args.out)
    if args.print_config:
        sys.stdout.write(config.dump())
        return 0
    if not args.command:
        raise UsageError("A subcommand is required: " + ", ".join(PIPELINE_MAP))

    workers = args.workers
    if workers is None and not os.getenv(WORKERS_ENV):
        workers = config.workers
    processor = Processor(resolve_workers(workers))

    options = {k: v for k, v in vars(args).items()
               if k not in ('config', 'seed', 'out', 'workers', 'print_config', 'verbose', 'command')}
    pipeline = PIPELINE_MAP[args.command](config, processor)
    logger.info(f"Running {pipeline.name} (seed={config.seed}, out={config.out_dir}, workers={processor.workers})")
    written = pipeline.run(**options)
    for path in written:
        logger.info(f"Wrote {path}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    load_dotenv(override=True)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[logging.StreamHandler(sys.stderr)]
    )

    try:
        return run(args)
    except DrcError as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        print(f"error: {type(exc).__name__}: {' '.join(str(exc).split())}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        print(f"error: {type(exc).__name__}: {' '.join(str(exc).split())}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
