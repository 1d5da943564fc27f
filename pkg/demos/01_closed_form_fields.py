"""Mean exit times from the Dirichlet problem, checked against closed forms.

The expected time for a diffusion started at y to leave a domain Q solves

    L v = -1 in Q,    v = 0 on the boundary,

where L is the generator f . grad + (1/2) sum b_jk d_jk.  For a few domains
v is known in closed form, which makes a sharp end-to-end check of the
finite-difference solver: the stencils are exact on quadratics, so the two
driftless cases below are reproduced to solver roundoff at every node.
"""

from __future__ import annotations

import math

import numpy as np

from exitbound import geometry as geo
from exitbound import pde


def interval_case() -> None:
    # Brownian motion on (0,1): v(y) = y(1-y), slope 1-2y, so sup|v'| = 1.
    spec = pde.DiffusionSpec.from_strings(1, 1, ["0"], [["1"]])
    field = pde.solve_mean_exit(geo.Interval(0.0, 1.0), spec, 1001)
    y = field.grid.interior_points[:, 0]
    err = np.max(np.abs(field.interior_values() - y * (1.0 - y)))
    print("Brownian motion on (0,1), 1001 nodes")
    print(f"  max |v - y(1-y)|   = {err:.3e}")
    print(f"  sup |grad v|       = {pde.sup_grad_norm(field):.12f}  (exact: 1)")
    print(f"  v(0.3)             = {field.value_at([[0.3]])[0]:.12f}  (exact: 0.21)")


def disk_case() -> None:
    # Planar Brownian motion on the unit disk: v(y) = (1 - |y|^2) / 2.
    # The boundary is curved, so interior nodes next to the rim use
    # shortened stencil arms; quadratic exactness survives the cut cells.
    spec = pde.DiffusionSpec.from_strings(2, 2, ["0", "0"], [["1", "0"], ["0", "1"]])
    field = pde.solve_mean_exit(geo.Ball((0.0, 0.0), 1.0), spec, 201)
    pts = field.grid.interior_points
    err = np.max(np.abs(field.interior_values() - (1.0 - (pts**2).sum(axis=1)) / 2.0))
    print("\nBrownian motion on the unit disk, 201 x 201 lattice")
    print(f"  interior nodes     = {field.grid.n_interior}")
    print(f"  max nodal error    = {err:.3e}")
    print(f"  v(0, 0)            = {field.value_at([[0.0, 0.0]])[0]:.12f}  (exact: 0.5)")
    print(f"  sup |grad v|       = {pde.sup_grad_norm(field):.6f}  (exact: 1 at the rim)")


def drift_case() -> None:
    # Constant drift against the diffusion: (1/2) v'' + v' = -1 on (0,1)
    # gives v(y) = (1 - e^{-2y}) / (1 - e^{-2}) - y.  Not a quadratic, so
    # the error is finite and shrinks at second order in h.
    spec = pde.DiffusionSpec.from_strings(1, 1, ["1"], [["1"]])
    amp = 1.0 / (1.0 - math.exp(-2.0))
    print("\nUnit drift on (0,1), second-order error decay")
    prev = None
    for res in (51, 101, 201, 401):
        field = pde.solve_mean_exit(geo.Interval(0.0, 1.0), spec, res)
        y = field.grid.interior_points[:, 0]
        err = np.max(np.abs(field.interior_values() - (amp * (1.0 - np.exp(-2.0 * y)) - y)))
        note = "" if prev is None else f"  (ratio {prev / err:.2f})"
        print(f"  {res:4d} nodes: max error = {err:.3e}{note}")
        prev = err


if __name__ == "__main__":
    interval_case()
    disk_case()
    drift_case()
