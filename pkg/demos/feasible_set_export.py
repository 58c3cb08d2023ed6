"""Gridded MPCS feasible sets for the agent model under shrinking input bounds.

Starting from x0 = (1, 1), the level alpha = m(x0) is fixed and the largest
gridded control-invariant subset of {m <= alpha} is computed for several
input bounds. Tighter bounds leave fewer cells. Each set is written to a CSV
of cell centres and membership flags for plotting.

    python demos/feasible_set_export.py [out_dir]
"""

import sys
from pathlib import Path

from mpcstab import (Constraints, InputBox, StateGrid, StateSet, compute_feasible_set,
                     one_step_value)
from mpcstab.scenarios import AGENT_X0, agent_cost, agent_model


def main(out_dir="."):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model, l = agent_model(), agent_cost()
    grid = StateGrid([-2.0, -2.0], [2.0, 2.0], cells=41, controls=101)
    for u_bar in (1.0, 0.5, 0.1, 0.05):
        sets = Constraints(InputBox([u_bar]), StateSet.all_space(2))
        alpha = one_step_value(model, l, sets, AGENT_X0).m_val
        fs = compute_feasible_set(model, l, sets, alpha, grid)
        path = out / f"agent_fs_ubar_{u_bar:g}.csv"
        fs.to_csv(path)
        print(f"u_bar {u_bar:<5g} alpha {alpha:.5g}  sublevel cells {int(fs.sublevel.sum()):4d}"
              f"  invariant cells {fs.count:4d}  -> {path}")


if __name__ == "__main__":
    main(*sys.argv[1:])
