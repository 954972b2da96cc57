"""Kinematics kernel selection.

The compiled Cython kernel is preferred; the pure-numpy twin is the
fallback. `ARMTELEOP_BACKEND=pure|compiled` forces a choice (useful for
the backend benchmark and for debugging).
"""

import os
from contextlib import contextmanager

from . import _kinpure

_FORCE = os.environ.get("ARMTELEOP_BACKEND", "").strip().lower()

if _FORCE == "pure":
    _impl = _kinpure
elif _FORCE == "compiled":
    from . import _kincore as _impl  # raises if the extension was not built
else:
    try:
        from . import _kincore as _impl
    except ImportError:
        _impl = _kinpure

BACKEND = _impl.BACKEND
fk_pose = _impl.fk_pose
fk_origins_axes = _impl.fk_origins_axes
jacobian = _impl.jacobian
dls_solve = _impl.dls_solve


def available_backends():
    """Names of kernels importable in this environment."""
    names = ["pure"]
    try:
        from . import _kincore  # noqa: F401

        names.insert(0, "compiled")
    except ImportError:
        pass
    return names


def get_backend(name: str):
    """Fetch a specific kernel module by name ('pure' or 'compiled')."""
    if name == "pure":
        return _kinpure
    if name == "compiled":
        from . import _kincore

        return _kincore
    raise ValueError(f"unknown backend {name!r}")


@contextmanager
def use_backend(name: str):
    """Temporarily route kernel calls through a specific backend (benchmarks)."""
    global BACKEND, fk_pose, fk_origins_axes, jacobian, dls_solve
    saved = (BACKEND, fk_pose, fk_origins_axes, jacobian, dls_solve)
    impl = get_backend(name)
    BACKEND = impl.BACKEND
    fk_pose = impl.fk_pose
    fk_origins_axes = impl.fk_origins_axes
    jacobian = impl.jacobian
    dls_solve = impl.dls_solve
    try:
        yield impl
    finally:
        BACKEND, fk_pose, fk_origins_axes, jacobian, dls_solve = saved
