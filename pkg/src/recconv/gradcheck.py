"""Central finite-difference check of hand-written vector-Jacobian products."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict

import numpy as np

from .rng import SplitMix64


@dataclass
class GradcheckReport:
    max_rel_err: float
    n_coords: int
    worst: str
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def fd_gradcheck(
    forward: Callable[[], np.ndarray],
    vjp: Callable[[np.ndarray], Dict[str, np.ndarray]],
    inputs: Dict[str, np.ndarray],
    seed: int = 0,
    n_coords: int = 200,
    tol: float = 1e-5,
) -> GradcheckReport:
    """Compare ``vjp`` against central differences of ``<forward(), g>``.

    ``forward`` must read the arrays in ``inputs`` each time it is called; they
    are perturbed in place one coordinate at a time and restored exactly.
    ``vjp(g)`` runs the forward pass at the unperturbed point and returns the
    gradient of ``<forward(), g>`` for every name in ``inputs``.  The cotangent
    ``g`` and the coordinate subsample are both derived from ``seed``.
    """
    y0 = forward()
    g = SplitMix64(seed).symmetric(y0.shape, 1.0)
    analytic = vjp(g)

    coords = [(name, i) for name, a in inputs.items() for i in range(a.size)]
    pick = np.random.default_rng(seed).permutation(len(coords))[:n_coords]

    worst, worst_at = 0.0, ""
    for idx in sorted(pick):
        name, i = coords[idx]
        arr = inputs[name].reshape(-1)
        orig = arr[i]
        h = 1e-6 * max(1.0, abs(orig))
        arr[i] = orig + h
        y_plus = forward()
        arr[i] = orig - h
        y_minus = forward()
        arr[i] = orig
        # difference the outputs before reducing so unaffected entries cancel exactly
        fd = float(np.sum((y_plus - y_minus) * g)) / (2.0 * h)
        an = float(analytic[name].reshape(-1)[i])
        err = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
        if err > worst:
            worst, worst_at = err, f"{name}[{i}]"
    return GradcheckReport(worst, len(pick), worst_at, tol)
