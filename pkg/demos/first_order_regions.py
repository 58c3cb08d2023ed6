"""Stability regions of scalar plants x+ = a x + b u under one-step MPC.

For each open-loop pole ``a`` the script sweeps the control weight ``r`` and
marks where the closed-loop pole ``a r / (r + b^2 q)`` lies inside the unit
circle (new condition) and where the prior sufficient condition also holds.
The gap between the two columns is the extra region certified by the
one-step value.

    python demos/first_order_regions.py
"""

import numpy as np

from mpcstab import first_order_region


def main(b=1.0, q=1.0):
    rs = np.array([0.1, 0.3, 1.0, 3.0, 10.0])
    print("a      " + "".join(f"r={r:<8g}" for r in rs))
    for a in np.linspace(0.5, 4.0, 8):
        cells = []
        for r in rs:
            reg = first_order_region(a, b, q, r)
            tag = "both" if reg.prior else ("new" if reg.new else "-")
            cells.append(f"{tag:<10s}")
        print(f"{a:<7.2f}" + "".join(cells))
    print()
    # largest r still certified by the new condition, from |a r / (r + b^2 q)| < 1
    for a in (1.5, 2.0, 3.0):
        r_max = b * b * q / (a - 1.0)
        print(f"a = {a}: stable for r < {r_max:.4g}")


if __name__ == "__main__":
    main()
