"""Posterior-sampling agent driven by value iteration, tree, beam and MCTS planners."""
import sys

from _common import sweep_and_report

if __name__ == "__main__":
    sys.exit(sweep_and_report("search.yaml", "runs/search"))
