"""Bit-parallel execution of straight-line logic programs.

A program is an ``(n, 4)`` int64 array of ``(op, dst, a, b)`` rows operating on
a register file of shape ``(n_regs, n_words)`` of uint64 words; every word holds
64 independent input vectors. Both netlist simulation and truth-table
evaluation compile down to this form.

The numba path is used when numba imports and ``CIRCUITTAG_NO_NUMBA`` is unset
(or ``0``); otherwise a pure-numpy loop runs the same program.
"""

import os

import numpy as np

OP_CONST0 = 0
OP_CONST1 = 1
OP_COPY = 2
OP_NOT = 3
OP_AND = 4
OP_OR = 5
OP_XOR = 6

ALL_ONES = np.uint64(0xFFFFFFFFFFFFFFFF)


def _numba_requested():
    return os.environ.get("CIRCUITTAG_NO_NUMBA", "0") in ("", "0")


def exec_program_numpy(code, regs):
    for op, dst, a, b in code:
        if op == OP_CONST0:
            regs[dst] = 0
        elif op == OP_CONST1:
            regs[dst] = ALL_ONES
        elif op == OP_COPY:
            regs[dst] = regs[a]
        elif op == OP_NOT:
            np.invert(regs[a], out=regs[dst])
        elif op == OP_AND:
            np.bitwise_and(regs[a], regs[b], out=regs[dst])
        elif op == OP_OR:
            np.bitwise_or(regs[a], regs[b], out=regs[dst])
        elif op == OP_XOR:
            np.bitwise_xor(regs[a], regs[b], out=regs[dst])
        else:
            raise ValueError(f"bad opcode {op}")
    return regs


exec_program_numba = None
if _numba_requested():
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        njit = None

    if njit is not None:

        @njit(cache=True)
        def exec_program_numba(code, regs):
            n_words = regs.shape[1]
            ones = np.uint64(0xFFFFFFFFFFFFFFFF)
            for i in range(code.shape[0]):
                op = code[i, 0]
                dst = code[i, 1]
                a = code[i, 2]
                b = code[i, 3]
                if op == 0:
                    for w in range(n_words):
                        regs[dst, w] = np.uint64(0)
                elif op == 1:
                    for w in range(n_words):
                        regs[dst, w] = ones
                elif op == 2:
                    for w in range(n_words):
                        regs[dst, w] = regs[a, w]
                elif op == 3:
                    for w in range(n_words):
                        regs[dst, w] = ~regs[a, w]
                elif op == 4:
                    for w in range(n_words):
                        regs[dst, w] = regs[a, w] & regs[b, w]
                elif op == 5:
                    for w in range(n_words):
                        regs[dst, w] = regs[a, w] | regs[b, w]
                else:
                    for w in range(n_words):
                        regs[dst, w] = regs[a, w] ^ regs[b, w]
            return regs


USING_NUMBA = exec_program_numba is not None


def exec_program(code, regs):
    """Run ``code`` in place on ``regs`` and return ``regs``."""
    code = np.ascontiguousarray(code, dtype=np.int64)
    if USING_NUMBA:
        return exec_program_numba(code, regs)
    return exec_program_numpy(code, regs)


def pack_bits(bits):
    """Pack a 1-d bool array into uint64 words, vector ``i`` at bit ``i % 64`` of word ``i // 64``."""
    bits = np.asarray(bits, dtype=bool).ravel()
    n_words = max(1, -(-bits.size // 64))
    padded = np.zeros(n_words * 64, dtype=bool)
    padded[: bits.size] = bits
    as_bytes = np.packbits(padded.reshape(-1, 8), axis=1, bitorder="little").ravel()
    return as_bytes.view("<u8").astype(np.uint64)


def unpack_bits(words, n):
    """Inverse of :func:`pack_bits`, returning the first ``n`` vectors."""
    words = np.ascontiguousarray(words, dtype="<u8")
    bits = np.unpackbits(words.view(np.uint8), bitorder="little")
    return bits[:n].astype(bool)


def exhaustive_patterns(n_vars):
    """Input words enumerating all ``2**n_vars`` assignments, variable 0 as the LSB of the row index."""
    n_rows = 1 << n_vars
    n_words = max(1, n_rows // 64)
    out = np.zeros((n_vars, n_words), dtype=np.uint64)
    rows = np.arange(n_words * 64, dtype=np.uint64)
    for j in range(n_vars):
        bits = ((rows >> np.uint64(j)) & np.uint64(1)).astype(bool)
        out[j] = pack_bits(bits)
    return out
