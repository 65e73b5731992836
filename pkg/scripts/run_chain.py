"""Delayed-reward chain: planning agent against the one-step greedy baseline (20 seeds)."""
import sys

from _common import sweep_and_report

if __name__ == "__main__":
    sys.exit(sweep_and_report("chain.yaml", "runs/chain"))
