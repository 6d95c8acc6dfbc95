"""Numba toggle shared by every hot kernel.

Setting ``AGESIR_DISABLE_NUMBA=1`` turns :func:`njit` into a no-op so the
same kernel bodies run as plain Python/NumPy. Both paths consume the
caller's :class:`numpy.random.Generator` identically, which keeps event
logs bit-identical between them.
"""
import os

DISABLED = os.environ.get("AGESIR_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")

if DISABLED:

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap

else:
    import numba

    def njit(*args, **kwargs):
        kwargs.setdefault("cache", True)
        kwargs.setdefault("nogil", True)
        if len(args) == 1 and callable(args[0]):
            return numba.njit(**kwargs)(args[0])
        return numba.njit(*args, **kwargs)


def backend():
    """Name of the active kernel backend."""
    return "python" if DISABLED else "numba"
