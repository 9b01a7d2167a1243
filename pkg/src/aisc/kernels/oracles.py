"""Host-language reimplementations of the shipped kernels.

Written against the algorithms, not the assembly, and using plain Python
floats so the operation order (and hence rounding) is explicit.  They read
their inputs from a generated memory image.
"""
from __future__ import annotations

import numpy as np

from aisc.kernels import SRR_SHIFTS, KernelSpec, read_symbol


def newton_sqrt(x, tol=1e-10, max_iter=64):
    out = []
    for xi in x:
        xi = float(xi)
        y = xi
        for _ in range(max_iter):
            y_new = (y + xi / y) * 0.5
            step = y_new - y
            y = y_new
            if -tol <= step < tol:
                break
        out.append(y)
    return np.array(out)


def kmeans(points, k=4, threshold=0, max_pass=50):
    """Lloyd's algorithm seeded with the first ``k`` points.

    Returns ``(labels, centroids, passes)``.  Ties go to the lower cluster
    index; empty clusters keep their centroid.
    """
    pts = [(float(px), float(py)) for px, py in points]
    cent = [list(p) for p in pts[:k]]
    labels = [-1] * len(pts)
    passes = 0
    while True:
        changes = 0
        for i, (px, py) in enumerate(pts):
            best, best_d = 0, 1e300
            for c, (cx, cy) in enumerate(cent):
                dx, dy = px - cx, py - cy
                d = dx * dx + dy * dy
                if d < best_d:
                    best, best_d = c, d
            if best != labels[i]:
                labels[i] = best
                changes += 1
        sums = [[0.0, 0.0] for _ in range(k)]
        counts = [0] * k
        for (px, py), c in zip(pts, labels):
            sums[c][0] += px
            sums[c][1] += py
            counts[c] += 1
        for c in range(k):
            if counts[c]:
                cent[c] = [sums[c][0] / float(counts[c]), sums[c][1] / float(counts[c])]
        passes += 1
        if changes <= threshold or passes >= max_pass:
            break
    return np.array(labels, dtype=np.float64), np.array(cent), passes


def power_iter(a, v0, tol=1e-8, max_steps=200):
    """Power iteration normalised by the largest-magnitude entry (sign kept)."""
    n = len(v0)
    rows = [[float(a[i][j]) for j in range(n)] for i in range(n)]
    v = [float(t) for t in v0]
    prev = 0.0
    lam = 0.0
    for _ in range(max_steps):
        w = []
        for row in rows:
            acc = 0.0
            for aij, vj in zip(row, v):
                acc += aij * vj
            w.append(acc)
        lam = w[0]
        for wi in w[1:]:
            if abs(wi) > abs(lam):
                lam = wi
        v = [wi / lam for wi in w]
        diff = lam - prev
        prev = lam
        if -tol < diff < tol:
            break
    return np.array(v), lam


def srr_mini(frames, shifts=SRR_SHIFTS, size=16, iterations=20, beta=0.25):
    """Iterative back-projection from 2x2-averaged, circularly shifted frames."""
    half = size // 2
    x = [[float(frames[0][r // 2][c // 2]) for c in range(size)] for r in range(size)]
    for _ in range(iterations):
        e = [[0.0] * size for _ in range(size)]
        for frame, (dy, dx) in zip(frames, shifts):
            for p in range(half):
                for q in range(half):
                    r0, r1 = (2 * p + dy) % size, (2 * p + dy + 1) % size
                    c0, c1 = (2 * q + dx) % size, (2 * q + dx + 1) % size
                    sim = ((x[r0][c0] + x[r0][c1]) + (x[r1][c0] + x[r1][c1])) / 4.0
                    res = float(frame[p][q]) - sim
                    for r, c in ((r0, c0), (r0, c1), (r1, c0), (r1, c1)):
                        e[r][c] += res
        for r in range(size):
            for c in range(size):
                x[r][c] = x[r][c] + e[r][c] * beta
    return np.array(x)


def oracle_output(spec: KernelSpec, image) -> np.ndarray:
    """The kernel's output region as computed by the host oracle."""
    if spec.name == "newton_sqrt":
        return newton_sqrt(read_symbol(spec, image, "x"), tol=read_symbol(spec, image, "conv")[0])
    if spec.name == "kmeans":
        pts = read_symbol(spec, image, "pts").reshape(-1, 2)
        thr = int(read_symbol(spec, image, "conv", as_float=False)[0])
        return kmeans(pts, threshold=thr)[0]
    if spec.name == "power_iter":
        n = spec.output_length
        a = read_symbol(spec, image, "a").reshape(n, n)
        return power_iter(a, read_symbol(spec, image, "v"), tol=read_symbol(spec, image, "conv")[0])[0]
    if spec.name == "srr_mini":
        frames = read_symbol(spec, image, "lr").reshape(4, 8, 8)
        return srr_mini(frames, size=spec.shape[0]).ravel()
    raise ValueError(f"no oracle for {spec.name}")
