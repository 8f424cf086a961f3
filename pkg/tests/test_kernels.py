import importlib
import os
import subprocess
import sys

import numpy as np
import pytest

from surgant import _kernels

from .oracles import lcs_bruteforce

compiled = pytest.mark.skipif("cython" not in _kernels.available_backends(),
                              reason="compiled kernels not built")


def gru_args(rng, b=3, t=5, d=4, h=3):
    return ([rng.normal(size=(b, t, d))] + [rng.uniform(-0.5, 0.5, (h, d)) for _ in range(3)]
            + [rng.uniform(-0.5, 0.5, (h, h)) for _ in range(3)]
            + [rng.uniform(-0.5, 0.5, h) for _ in range(3)])


@compiled
@pytest.mark.parametrize("reverse", [False, True])
def test_backends_agree_on_gru_scan(reverse, rng):
    args = gru_args(rng)
    fwd = {b: _kernels.gru_scan_forward(*args, reverse=reverse, backend=b)
           for b in ("cython", "python")}
    for a, c in zip(fwd["cython"], fwd["python"]):
        np.testing.assert_allclose(a, c, atol=1e-14)
    d_hs = rng.normal(size=fwd["python"][0].shape)
    z, r, c, p = fwd["python"][1:]
    bwd = {b: _kernels.gru_scan_backward(d_hs, *args[:7], z, r, c, p, reverse=reverse, backend=b)
           for b in ("cython", "python")}
    for a, c in zip(bwd["cython"], bwd["python"]):
        np.testing.assert_allclose(a, c, atol=1e-13)


@pytest.mark.parametrize("backend", _kernels.available_backends())
@pytest.mark.parametrize("seed", range(30))
def test_lcs_matches_enumeration(backend, seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 4, rng.integers(0, 8)).tolist()
    b = rng.integers(0, 4, rng.integers(0, 8)).tolist()
    assert _kernels.lcs_length(a, b, backend=backend) == lcs_bruteforce(a, b)


def test_unknown_backend():
    with pytest.raises(ValueError):
        _kernels.get_backend("fortran")


def test_environment_forces_fallback():
    env = dict(os.environ, SURGANT_KERNELS="python")
    out = subprocess.run([sys.executable, "-c", "import surgant; print(surgant.KERNEL_BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_default_backend_is_available():
    assert importlib.import_module("surgant").KERNEL_BACKEND in _kernels.available_backends()
