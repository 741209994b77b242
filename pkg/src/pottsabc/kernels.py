"""Hot loops for the Potts samplers.

Every kernel exists twice: a numba loop (``*_nb``) and a numpy path
(``*_np``). The public names at the bottom dispatch on ``NUMBA_OK``.

Randomness is never drawn inside a kernel. Callers pass blocks of uniforms
so that both paths see the same stream and return identical results. The
per-step layouts are:

* Swendsen-Wang step: ``rows*(cols-1)`` horizontal-bond uniforms, then
  ``(rows-1)*cols`` vertical-bond uniforms, then ``rows*cols`` relabel
  uniforms (label ``floor(u*k) + 1``; a cluster takes the relabel value of
  its lowest pixel index).
* Gibbs / chequerboard sweep: ``rows*cols`` uniforms, indexed by pixel.

Labels are 1-based ``int64`` arrays of shape ``(rows, cols)``.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ._accel import NUMBA_OK, njit


def sw_uniforms_per_step(rows: int, cols: int) -> int:
    return rows * (cols - 1) + (rows - 1) * cols + rows * cols


# ---------------------------------------------------------------------------
# sufficient statistic


def _suff_stat_np(z):
    return int(np.count_nonzero(z[:, 1:] == z[:, :-1]) + np.count_nonzero(z[1:, :] == z[:-1, :]))


@njit(cache=True, nogil=True)
def _suff_stat_nb(z):
    rows, cols = z.shape
    s = 0
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols and z[r, c] == z[r, c + 1]:
                s += 1
            if r + 1 < rows and z[r, c] == z[r + 1, c]:
                s += 1
    return s


# ---------------------------------------------------------------------------
# Swendsen-Wang


@njit(cache=True, nogil=True)
def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


@njit(cache=True, nogil=True)
def _sw_block_nb(z, k, beta, u, stats):
    rows, cols = z.shape
    n = rows * cols
    nh = rows * (cols - 1)
    nv = (rows - 1) * cols
    p_bond = 1.0 - math.exp(-beta)
    parent = np.empty(n, dtype=np.int64)
    flat = z.reshape(n)
    for b in range(u.shape[0]):
        ub = u[b]
        for i in range(n):
            parent[i] = i
        for r in range(rows):
            for c in range(cols - 1):
                i = r * cols + c
                if flat[i] == flat[i + 1] and ub[r * (cols - 1) + c] < p_bond:
                    a = _find(parent, i)
                    bb = _find(parent, i + 1)
                    if a < bb:
                        parent[bb] = a
                    elif bb < a:
                        parent[a] = bb
        for r in range(rows - 1):
            for c in range(cols):
                i = r * cols + c
                if flat[i] == flat[i + cols] and ub[nh + r * cols + c] < p_bond:
                    a = _find(parent, i)
                    bb = _find(parent, i + cols)
                    if a < bb:
                        parent[bb] = a
                    elif bb < a:
                        parent[a] = bb
        for i in range(n):
            root = _find(parent, i)
            lab = int(ub[nh + nv + root] * k) + 1
            if lab > k:
                lab = k
            flat[i] = lab
        if stats.shape[0] > 0:
            stats[b] = _suff_stat_nb(z)
    return z


def _sw_block_np(z, k, beta, u, stats):
    rows, cols = z.shape
    n = rows * cols
    nh = rows * (cols - 1)
    nv = (rows - 1) * cols
    p_bond = 1.0 - math.exp(-beta)
    idx = np.arange(n).reshape(rows, cols)
    h_src, h_dst = idx[:, :-1].ravel(), idx[:, 1:].ravel()
    v_src, v_dst = idx[:-1, :].ravel(), idx[1:, :].ravel()
    for b in range(u.shape[0]):
        ub = u[b]
        flat = z.ravel()
        open_h = (flat[h_src] == flat[h_dst]) & (ub[:nh] < p_bond)
        open_v = (flat[v_src] == flat[v_dst]) & (ub[nh:nh + nv] < p_bond)
        src = np.concatenate([h_src[open_h], v_src[open_v]])
        dst = np.concatenate([h_dst[open_h], v_dst[open_v]])
        graph = coo_matrix((np.ones(src.size, dtype=np.int8), (src, dst)), shape=(n, n))
        _, comp = connected_components(graph, directed=False)
        _, first = np.unique(comp, return_index=True)
        relabel = np.minimum((ub[nh + nv:] * k).astype(np.int64) + 1, k)
        z[...] = relabel[first[comp]].reshape(rows, cols)
        if stats.shape[0] > 0:
            stats[b] = _suff_stat_np(z)
    return z


# ---------------------------------------------------------------------------
# single-site Gibbs, raster scan
#
# The raster scan is inherently sequential, so the "numpy" path is the same
# loop run by the interpreter. Keep it for tiny lattices and for checking.


def _gibbs_block_py(z, k, beta, u, stats):
    rows, cols = z.shape
    # agreement counts are integers in 0..4
    table = np.empty(5)
    for d in range(5):
        table[d] = math.exp(-beta * d)
    agree = np.zeros(k, dtype=np.int64)
    for b in range(u.shape[0]):
        ub = u[b]
        for r in range(rows):
            for c in range(cols):
                up = z[r - 1, c] if r > 0 else 0
                dn = z[r + 1, c] if r + 1 < rows else 0
                lf = z[r, c - 1] if c > 0 else 0
                rt = z[r, c + 1] if c + 1 < cols else 0
                amax = 0
                for j in range(k):
                    lab = j + 1
                    a = int(up == lab) + int(dn == lab) + int(lf == lab) + int(rt == lab)
                    agree[j] = a
                    if a > amax:
                        amax = a
                total = 0.0
                for j in range(k):
                    total += table[amax - agree[j]]
                target = ub[r * cols + c] * total
                acc = 0.0
                lab = k
                for j in range(k):
                    acc += table[amax - agree[j]]
                    if target < acc:
                        lab = j + 1
                        break
                z[r, c] = lab
        if stats.shape[0] > 0:
            s = 0
            for r in range(rows):
                for c in range(cols):
                    if c + 1 < cols and z[r, c] == z[r, c + 1]:
                        s += 1
                    if r + 1 < rows and z[r, c] == z[r + 1, c]:
                        s += 1
            stats[b] = s
    return z


_gibbs_block_nb = njit(cache=True, nogil=True)(_gibbs_block_py)


# ---------------------------------------------------------------------------
# chequerboard sweep for the hidden model


@njit(cache=True, nogil=True)
def _cheq_block_nb(z, y, log_norm, mu, inv2var, beta, u):
    rows, cols = z.shape
    k = mu.shape[0]
    lp = np.empty(k)
    agree = np.empty(k)
    delta_s = 0
    for b in range(u.shape[0]):
        ub = u[b]
        for colour in range(2):
            for r in range(rows):
                for c in range((r + colour) % 2, cols, 2):
                    for j in range(k):
                        agree[j] = 0.0
                    if r > 0:
                        agree[z[r - 1, c] - 1] += 1.0
                    if r + 1 < rows:
                        agree[z[r + 1, c] - 1] += 1.0
                    if c > 0:
                        agree[z[r, c - 1] - 1] += 1.0
                    if c + 1 < cols:
                        agree[z[r, c + 1] - 1] += 1.0
                    yi = y[r, c]
                    lmax = -np.inf
                    for j in range(k):
                        d = yi - mu[j]
                        lp[j] = log_norm[j] - d * d * inv2var[j] + beta * agree[j]
                        if lp[j] > lmax:
                            lmax = lp[j]
                    total = 0.0
                    for j in range(k):
                        lp[j] = math.exp(lp[j] - lmax)
                        total += lp[j]
                    target = ub[r * cols + c] * total
                    acc = 0.0
                    lab = k
                    for j in range(k):
                        acc += lp[j]
                        if target < acc:
                            lab = j + 1
                            break
                    old = z[r, c]
                    delta_s += int(agree[lab - 1]) - int(agree[old - 1])
                    z[r, c] = lab
    return z, delta_s


def _agreement_counts_np(z, k):
    """(rows, cols, k) array: number of neighbours carrying each label."""
    rows, cols = z.shape
    out = np.zeros((rows, cols, k))
    onehot = z[..., None] == np.arange(1, k + 1)
    out[1:] += onehot[:-1]
    out[:-1] += onehot[1:]
    out[:, 1:] += onehot[:, :-1]
    out[:, :-1] += onehot[:, 1:]
    return out


def _cheq_block_np(z, y, log_norm, mu, inv2var, beta, u):
    rows, cols = z.shape
    k = mu.shape[0]
    parity = np.add.outer(np.arange(rows), np.arange(cols)) % 2
    masks = [parity == 0, parity == 1]
    d2 = (y[..., None] - mu) ** 2
    lik = log_norm - d2 * inv2var
    delta_s = 0
    for b in range(u.shape[0]):
        ub = u[b].reshape(rows, cols)
        for mask in masks:
            agree = _agreement_counts_np(z, k)[mask]
            lp = lik[mask] + beta * agree
            w = np.exp(lp - lp.max(axis=1, keepdims=True))
            cum = np.cumsum(w, axis=1)
            target = ub[mask] * cum[:, -1]
            new = np.minimum((cum <= target[:, None]).sum(axis=1), k - 1)
            old = z[mask] - 1
            rows_i = np.arange(new.size)
            delta_s += int(agree[rows_i, new].sum() - agree[rows_i, old].sum())
            z[mask] = new + 1
    return z, delta_s


# ---------------------------------------------------------------------------
# exhaustive enumeration of the statistic's distribution at beta=0


@njit(cache=True, nogil=True)
def _enumerate_counts_nb(rows, cols, k):
    n = rows * cols
    n_edges = rows * (cols - 1) + cols * (rows - 1)
    counts = np.zeros(n_edges + 1, dtype=np.int64)
    z = np.zeros(n, dtype=np.int64)
    s = n_edges
    while True:
        counts[s] += 1
        i = 0
        while i < n:
            old = z[i]
            new = old + 1
            if new == k:
                new = 0
            r = i // cols
            c = i - r * cols
            diff = 0
            if c > 0:
                diff += int(z[i - 1] == new) - int(z[i - 1] == old)
            if c + 1 < cols:
                diff += int(z[i + 1] == new) - int(z[i + 1] == old)
            if r > 0:
                diff += int(z[i - cols] == new) - int(z[i - cols] == old)
            if r + 1 < rows:
                diff += int(z[i + cols] == new) - int(z[i + cols] == old)
            s += diff
            z[i] = new
            if new != 0:
                break
            i += 1
        if i == n:
            break
    return counts


def _enumerate_counts_np(rows, cols, k, chunk=1 << 18):
    n = rows * cols
    n_edges = rows * (cols - 1) + cols * (rows - 1)
    total = k ** n
    counts = np.zeros(n_edges + 1, dtype=np.int64)
    powers = k ** np.arange(n, dtype=np.int64)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        z = ((idx[:, None] // powers) % k).reshape(-1, rows, cols)
        s = (z[:, :, 1:] == z[:, :, :-1]).sum(axis=(1, 2)) + (z[:, 1:, :] == z[:, :-1, :]).sum(axis=(1, 2))
        counts += np.bincount(s, minlength=n_edges + 1)
    return counts


# ---------------------------------------------------------------------------
# dispatch

if NUMBA_OK:
    suff_stat = _suff_stat_nb
    sw_block = _sw_block_nb
    gibbs_block = _gibbs_block_nb
    cheq_block = _cheq_block_nb
    enumerate_counts = _enumerate_counts_nb
else:
    suff_stat = _suff_stat_np
    sw_block = _sw_block_np
    gibbs_block = _gibbs_block_py
    cheq_block = _cheq_block_np
    enumerate_counts = _enumerate_counts_np

IMPLEMENTATIONS = {
    "numba": {
        "suff_stat": _suff_stat_nb,
        "sw_block": _sw_block_nb,
        "gibbs_block": _gibbs_block_nb,
        "cheq_block": _cheq_block_nb,
        "enumerate_counts": _enumerate_counts_nb,
    },
    "numpy": {
        "suff_stat": _suff_stat_np,
        "sw_block": _sw_block_np,
        "gibbs_block": _gibbs_block_py,
        "cheq_block": _cheq_block_np,
        "enumerate_counts": _enumerate_counts_np,
    },
}
