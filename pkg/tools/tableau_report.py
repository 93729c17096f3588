"""Print order-condition defects and stability data for a tableau.

Usage: python tools/tableau_report.py <builtin name or path>
"""
import sys

import numpy as np

from borok.orderconditions import k_condition_defects, stability_function
from borok.tableau import resolve_tableau


def main(spec):
    tab = resolve_tableau(spec)
    print(f"{tab.name}: s={tab.s} order={tab.order_p} embedded={tab.order_p_hat}")
    for label, d in k_condition_defects(tab):
        print(f"  {label:22s} {d: .3e}")
    if tab.b_hat is not None:
        print("embedded weights:")
        for label, d in k_condition_defects(tab, tab.b_hat, tab.order_p_hat):
            print(f"  {label:22s} {d: .3e}")
    y = np.logspace(-3, 5, 2000)
    for name, w in (("R", tab.b), ("R_hat", tab.b_hat)):
        if w is None:
            continue
        R = stability_function(tab, w)
        print(f"{name}: max |{name}(iy)| = {np.abs(R(1j * y)).max():.15f}, "
              f"{name}(-1e12) = {R(np.array(-1e12))[()].real:.3e}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "rok4k")
