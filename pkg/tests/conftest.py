"""Shared helpers: finite-difference gradient checking against the tape."""

import numpy as np
import pytest

from fgwcl import autodiff as ad


def rel_err(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def fd_gradient(f, x, h=1e-5):
    """Central finite differences of scalar-valued f at array x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2.0 * h)
        it.iternext()
    return g


def check_grad(build, params, h=1e-5, tol=1e-6):
    """Compare tape gradients of ``build(tensors) -> scalar Tensor`` with
    central finite differences over every entry of every parameter array.

    ``params`` maps names to numpy arrays; ``build`` receives a dict of
    Tensor leaves keyed the same way and must evaluate the full forward
    pass from them (it runs once per perturbed entry).
    """
    ad.reset_tape()
    leaves = {k: ad.Tensor(v, requires_grad=True) for k, v in params.items()}
    loss = build(leaves)
    ad.backward(loss)
    analytic = {k: leaves[k].grad for k in params}

    for name, base in params.items():
        def scalar(x, _name=name):
            ad.reset_tape()
            trial = {
                k: ad.Tensor(x if k == _name else v, requires_grad=False)
                for k, v in params.items()
            }
            return build(trial).item

        numeric = fd_gradient(scalar, np.asarray(base, dtype=np.float64), h=h)
        got = analytic[name]
        assert got is not None, f"no gradient reached parameter {name!r}"
        err = rel_err(got, numeric)
        assert err < tol, f"gradient mismatch for {name!r}: rel err {err:.3e}"


@pytest.fixture
def rng():
    return np.random.default_rng(0)
