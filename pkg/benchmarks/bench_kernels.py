"""Compare the numba and pure-numpy paths of the bit-parallel logic kernel.

Usage: python benchmarks/bench_kernels.py [--gates 2000] [--words 4] [--repeat 20]

Simulates a random netlist on ``words * 64`` input vectors with both kernel
paths, checks they agree bit for bit, and prints the median time of each.
"""

import argparse
import statistics
import time

import numpy as np

from circuittag import _kernels as K
from circuittag.generate import random_netlist
from circuittag.library import demo_library


def _time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--gates", type=int, default=2000)
    ap.add_argument("--words", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)

    n = random_netlist(demo_library(), 0, args.gates, n_inputs=32, n_registers=16)
    code, _, width = n.program
    code = np.ascontiguousarray(code, dtype=np.int64)
    rng = np.random.default_rng(1)
    base = rng.integers(0, 2**63, size=(width, args.words), dtype=np.uint64)

    ref = K.exec_program_numpy(code, base.copy())
    t_np = _time(lambda: K.exec_program_numpy(code, base.copy()), args.repeat)
    print(f"program: {len(code)} ops, {width} registers, {args.words * 64} vectors")
    print(f"numpy  : {t_np * 1e3:9.3f} ms")
    if K.exec_program_numba is None:
        print("numba  : unavailable (numba missing or CIRCUITTAG_NO_NUMBA set)")
        return
    K.exec_program_numba(code, base.copy())  # compile
    out = K.exec_program_numba(code, base.copy())
    assert np.array_equal(out, ref), "kernel paths disagree"
    t_nb = _time(lambda: K.exec_program_numba(code, base.copy()), args.repeat)
    print(f"numba  : {t_nb * 1e3:9.3f} ms  ({t_np / t_nb:.1f}x)")


if __name__ == "__main__":
    main()
