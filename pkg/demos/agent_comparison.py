"""Five closed-loop runs on the two-state agent model, side by side.

Plain one-step MPC with Q = I, R = 0 diverges even though the open-loop
plant is stable. Reweighting the state cost, lengthening the horizon to two
steps or switching to MPCS all restore convergence. The table reports the
classification and whether J* and alpha decreased along each run.

    python demos/agent_comparison.py
"""

import numpy as np

from mpcstab import compare_runs, format_summary
from mpcstab.scenarios import EXAMPLES, run_example

STEPS = 60


def main():
    traces = [run_example(name, steps=STEPS) for name in EXAMPLES]
    print(format_summary(compare_runs(traces)))
    print()
    for tr in traces:
        # the first few norms show how quickly each loop settles (or does not)
        norms = np.linalg.norm(tr.X[:6], axis=1)
        print(f"{tr.label:18s}", " ".join(f"{v:9.3g}" for v in norms))


if __name__ == "__main__":
    main()
