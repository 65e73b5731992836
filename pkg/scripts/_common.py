"""Shared helper: sweep a config, then print the report table."""
import argparse
import sys
from pathlib import Path

from rafa import cli

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def sweep_and_report(config_name: str, default_out: str, argv=None) -> int:
    p = argparse.ArgumentParser(description=f"sweep configs/{config_name} and print its report")
    p.add_argument("--out", default=default_out)
    p.add_argument("--jobs", type=int, default=1)
    args = p.parse_args(argv)
    code = cli.main(["sweep", "--config", str(CONFIGS / config_name), "--out", args.out,
                     "--jobs", str(args.jobs)])
    if code == 2:
        return code
    report = cli.main(["report", str(Path(args.out) / "sweep.csv")])
    return code or report


if __name__ == "__main__":
    sys.exit("import this module from one of the run_* scripts")
