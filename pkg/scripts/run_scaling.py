"""Regret growth of the ps, bonus and bma agents at T = 500, 2000, 8000 (20 seeds)."""
import sys

from _common import sweep_and_report

if __name__ == "__main__":
    sys.exit(sweep_and_report("scaling.yaml", "runs/scaling"))
