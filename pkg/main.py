# main.py

from utils import generate_dynamic_output_file_name, write_report
from perturb.errors import InputError
from perturb.problem_file import apply_overrides, load_problem_file
from perturb.workflows import (
    DEFAULT_CONFIG_PATH,
    EXIT_INPUT_ERROR,
    load_settings,
    run_check,
    run_reproduce,
    run_solve,
)
from dotenv import load_dotenv
import argparse
import logging
import os
import sys

logger = logging.getLogger()


def configure_logging(quiet: bool = False) -> None:
    """
    Log to a timestamped file and the console. PERTURB_LOG_LEVEL and
    PERTURB_LOG_DIR (environment or .env) override the level and directory;
    --quiet raises the console level to WARNING.
    """
    load_dotenv()
    level = getattr(logging, os.getenv("PERTURB_LOG_LEVEL", "INFO").upper(), logging.INFO)
    log_dir = os.getenv("PERTURB_LOG_DIR", "./logs")
    logger.setLevel(level)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    formatter = logging.Formatter('%(asctime)s - %(levelname)s - %(message)s')

    # File handler
    output_log_file = generate_dynamic_output_file_name('main', output_file_type="log", output_folder=log_dir)
    file_handler = logging.FileHandler(output_log_file, mode='w')
    file_handler.setFormatter(formatter)
    logger.addHandler(file_handler)

    # Console handler
    console_handler = logging.StreamHandler()
    console_handler.setFormatter(formatter)
    console_handler.setLevel(logging.WARNING if quiet else level)
    # records marked console=False go to the log file only
    console_handler.addFilter(lambda record: getattr(record, "console", True))
    logger.addHandler(console_handler)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Solve and check perturbed operator equations f(u) = v, f = cI + K + C.",
        epilog="Exit codes: 0 success, 1 input error, 2 numerical failure.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", default=None, help="Report file (default from config, report.json)")
    common.add_argument("--tol", type=float, default=None, help="Solver tolerance")
    common.add_argument("--nodes", type=int, default=None, help="Quadrature nodes per dimension")
    common.add_argument("--seed", type=int, default=None, help="Seed for probes and random checks")
    common.add_argument("--method", choices=["picard", "newton"], default=None, help="Override the file's method")
    common.add_argument("--config", default=DEFAULT_CONFIG_PATH, help="YAML settings file")
    common.add_argument("--quiet", action="store_true", help="Only warnings and errors on the console")
    common.add_argument("--timings", action="store_true", help="Record wall-clock timings in the report")

    commands = parser.add_subparsers(dest="command", required=True)
    solve = commands.add_parser("solve", parents=[common], help="Solve the problem in a JSON file")
    solve.add_argument("file", help="Problem file")
    check = commands.add_parser("check", parents=[common], help="Run the hypothesis checks on a JSON file")
    check.add_argument("file", help="Problem file")
    reproduce = commands.add_parser("reproduce", parents=[common], help="Run an embedded example")
    reproduce.add_argument("example_id", help="example1 or example2")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.quiet)

    try:
        settings = load_settings(args.config)
        overrides = dict(tol=args.tol, nodes=args.nodes, seed=args.seed, method=args.method)
        timings = args.timings or bool(settings["report"]["timings"])
        if args.command == "reproduce":
            result = run_reproduce(args.example_id, settings, timings, **overrides)
        else:
            problem_file = apply_overrides(load_problem_file(args.file), **overrides)
            runner = run_solve if args.command == "solve" else run_check
            result = runner(problem_file, settings, timings)
    except (InputError, ValueError) as err:
        logger.error(f"Input error: {err}", extra={"console": False})
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT_ERROR

    output = args.output or settings["report"]["output"]
    write_report(result.report, output)
    logger.info(f"Report written to {output}")
    print(result.summary)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
