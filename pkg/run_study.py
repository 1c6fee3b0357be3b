# pylint: disable=import-outside-toplevel,unused-import
"""Run a 3RRR balancing study."""
import asyncio
import sys

# ATTENTION! This import must go before any other imports from this project
# noinspection PyUnresolvedReferences
from rrr_balance_study import rrr_balance_study_config


async def amain() -> int:
    """
    Run the pipeline verb given on the command line, e.g. `python run_study.py run --config configs/wl_default.toml`
    """
    from rrr_balance_study.cli import amain as acli

    return await acli(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(asyncio.run(amain()))
