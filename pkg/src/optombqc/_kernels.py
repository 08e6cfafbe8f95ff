"""Compiled Lindblad right-hand side for CSR operators.

Computes ``-i (H rho - rho H†) + Σ_k c_k rho c_k†`` row by row without
transposing ``rho``. Falls back to scipy products when numba is missing.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    njit = None

HAVE_NUMBA = njit is not None


def _rhs_rows(hp, hi, hd, cp, ci, cd, c_start, rho, out):  # pragma: no cover - compiled
    d = rho.shape[0]
    n_c = c_start.shape[0] - 1
    tmp = np.empty(d, dtype=np.complex128)
    for i in range(d):
        row = out[i]
        rho_i = rho[i]
        for j in range(d):
            acc = 0.0j
            for kk in range(hp[j], hp[j + 1]):
                acc += rho_i[hi[kk]] * np.conj(hd[kk])
            row[j] = 1j * acc
        for kk in range(hp[i], hp[i + 1]):
            h = -1j * hd[kk]
            src = rho[hi[kk]]
            for j in range(d):
                row[j] += h * src[j]
        for c in range(n_c):
            base = c_start[c]
            lo = cp[base + i]
            up = cp[base + i + 1]
            if lo == up:
                continue
            v = cd[lo]
            src = rho[ci[lo]]
            for j in range(d):
                tmp[j] = v * src[j]
            for kk in range(lo + 1, up):
                v = cd[kk]
                src = rho[ci[kk]]
                for j in range(d):
                    tmp[j] += v * src[j]
            for j in range(d):
                acc = 0.0j
                for ll in range(cp[base + j], cp[base + j + 1]):
                    acc += tmp[ci[ll]] * np.conj(cd[ll])
                row[j] += acc


if HAVE_NUMBA:
    _rhs_rows = njit(cache=True, nogil=True, fastmath=True, error_model="numpy")(_rhs_rows)


class SparseRHS:
    """Packed CSR data for the compiled right-hand side."""

    def __init__(self, heff, collapse):
        heff = heff.tocsr()
        self.hp = heff.indptr.astype(np.int64)
        self.hi = heff.indices.astype(np.int64)
        self.hd = heff.data.astype(np.complex128)
        d = heff.shape[0]
        ptrs, idx, data, starts = [], [], [], [0]
        offset = 0
        for c in collapse:
            c = c.tocsr()
            ptrs.append(c.indptr.astype(np.int64) + offset)
            idx.append(c.indices.astype(np.int64))
            data.append(c.data.astype(np.complex128))
            offset += c.nnz
            starts.append(starts[-1] + d + 1)
        self.cp = np.concatenate(ptrs) if ptrs else np.zeros(1, dtype=np.int64)
        self.ci = np.concatenate(idx) if idx else np.zeros(0, dtype=np.int64)
        self.cd = np.concatenate(data) if data else np.zeros(0, dtype=np.complex128)
        self.c_start = np.asarray(starts, dtype=np.int64)

    def __call__(self, rho: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        rho = np.ascontiguousarray(rho, dtype=np.complex128)
        if out is None:
            out = np.empty_like(rho)
        _rhs_rows(self.hp, self.hi, self.hd, self.cp, self.ci, self.cd, self.c_start, rho, out)
        return out
