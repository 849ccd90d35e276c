"""Indivisible read-modify-write on numpy cells from compiled code."""

import ctypes

from numba import types
from numba.core import cgutils
from numba.extending import intrinsic


def _rmw(op, name):
    def impl(typingctx, arr, idx, val):
        if not isinstance(arr, types.Array):
            return None
        sig = arr.dtype(arr, idx, val)

        def codegen(context, builder, signature, args):
            arrty = signature.args[0]
            a, i, v = args
            v = context.cast(builder, v, signature.args[2], arrty.dtype)
            ary = context.make_array(arrty)(context, builder, a)
            ptr = cgutils.get_item_pointer(context, builder, arrty, ary, [i],
                                           wraparound=False)
            return builder.atomic_rmw(op, ptr, v, "seq_cst")

        return sig, codegen

    impl.__name__ = impl.__qualname__ = name
    return impl


# Both return the value held before the add.
atomic_add_f64 = intrinsic(_rmw("fadd", "atomic_add_f64"))
atomic_add_i64 = intrinsic(_rmw("add", "atomic_add_i64"))


# Bound by symbol name rather than ctypes pointer so callers stay cacheable.
try:
    ctypes.CDLL(None).sched_yield
    sched_yield = types.ExternalFunction("sched_yield", types.int32())
except (OSError, AttributeError):  # pragma: no cover
    from numba import njit

    @njit(cache=True)
    def sched_yield():
        return 0
