"""Central finite-difference checks for engine graphs."""

import numpy as np

from . import autograd as ag


def rel_error(a, b, floor=1e-6):
    return abs(a - b) / max(abs(a), abs(b), floor)


def numeric_grad(f, arr, index, step=1e-5):
    """Central difference of scalar ``f()`` with respect to ``arr[index]`` (mutated in place)."""
    old = arr[index]
    arr[index] = old + step
    up = float(f())
    arr[index] = old - step
    down = float(f())
    arr[index] = old
    return (up - down) / (2 * step)


def check_graph(build, params, rng, n_coords=6, step=1e-5, floor=1e-6):
    """Compare backprop gradients with finite differences on sampled coordinates.

    ``build()`` returns a scalar node computed from the parameter nodes in
    ``params`` (name -> node). Returns a list of (name, index, analytic,
    numeric, rel_err), one per sampled coordinate.
    """
    for p in params.values():
        p.grad = None
    ag.backward(build())
    analytic = {name: (p.grad if p.grad is not None else np.zeros_like(p.value)).copy()
                for name, p in params.items()}
    rows = []
    for name, p in params.items():
        if not p.value.flags.c_contiguous:
            raise ValueError(f"parameter {name} is not contiguous")
        flat = p.value.reshape(-1)  # a view, so perturbing it perturbs the parameter
        picks = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
        for k in picks:
            num = numeric_grad(lambda: build().value, flat, k, step)
            ana = float(analytic[name].reshape(-1)[k])
            rows.append((name, int(k), ana, num, rel_error(ana, num, floor)))
    return rows
