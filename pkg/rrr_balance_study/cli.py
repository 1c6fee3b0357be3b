"""
Command-line surface of the study pipeline.
"""

import argparse
from pathlib import Path
from typing import Optional, Sequence

from rrr_balance_study.rrr_balance_study_config import LOG_LEVEL, THREADS, configure_logging
from rrr_balance_study.utils import ConfigError, NumericError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

VERBS = ("workspace", "place", "optimize", "cam", "report", "run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="run_study.py",
        description="Static balancing study of a planar 3RRR parallel robot with torsional springs and wire cams.",
    )
    parser.add_argument(
        "verb",
        choices=VERBS,
        help="stages to run: workspace, place, optimize, cam, run (everything); report re-renders the summary",
    )
    parser.add_argument("--config", type=Path, help="study TOML file (not needed for `report`)")
    parser.add_argument("--out", type=Path, default=None, help="output directory (default: [output].directory)")
    parser.add_argument("--threads", type=int, default=THREADS, help="worker thread cap (default: %(default)s)")
    parser.add_argument("--strict", action="store_true", help="require every config section, reject unknown keys")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return parser


async def amain(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse the arguments, run the requested verb and map failures to exit codes: 2 for a configuration error, 3 for a
    numeric or stage failure.
    """
    # pylint: disable=import-outside-toplevel
    from rrr_balance_study.report import emit_summary
    from rrr_balance_study.study import arun_study
    from rrr_balance_study.study_config import StudyConfig, load_study_config

    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging("DEBUG" if args.verbose else LOG_LEVEL)

    try:
        if args.verb == "report":
            out_dir = args.out or Path(StudyConfig().output.directory)
            if args.config is not None:
                out_dir = args.out or Path(load_study_config(args.config, args.strict).output.directory)
            path = emit_summary(out_dir)
            print(path.read_text(encoding="utf-8"), end="")
            return EXIT_OK

        if args.config is None:
            parser.error(f"--config is required for `{args.verb}`")
        config = load_study_config(args.config, strict=args.strict)
        bundle = await arun_study(config, args.out, args.verb, max(args.threads, 1))
    except ConfigError as exc:
        print(f"\n\033[31;1mCONFIG ERROR: {exc}\033[0m")
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"\n\033[31;1mNUMERIC FAILURE: {exc}\033[0m")
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        print(f"\n\033[31;1mMISSING FILE: {exc.filename}\033[0m")
        return EXIT_CONFIG

    print(f"\n\033[92;1mWROTE {len(bundle.artifacts)} FILES TO {bundle.out_dir}\033[0m")
    if args.verb == "run":
        print((bundle.out_dir / "summary.txt").read_text(encoding="utf-8"), end="")
    return EXIT_OK
