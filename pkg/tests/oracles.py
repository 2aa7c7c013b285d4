"""Independent reference computations used by the tests.

None of these share code paths with the package internals they check.
"""
import math

import numpy as np

from mazefl.geometry import Circle, Segment


def dense_ray_oracle(obstacles, origin, angle, max_range, n=100_000):
    """First hit by sampling every obstacle boundary at ``n`` points.

    A sample counts as "on the ray" when its perpendicular distance to the ray
    line is within the boundary sampling pitch; the answer is the smallest
    along-ray distance among those samples.
    """
    ox, oy = origin
    dx, dy = math.cos(angle), math.sin(angle)
    best = max_range
    for ob in obstacles:
        if isinstance(ob, Segment):
            (x1, y1), (x2, y2) = ob.p1, ob.p2
            cx, cy = (x1 + x2) / 2, (y1 + y2) / 2
            extent = math.dist(ob.p1, ob.p2) / 2
        else:
            (cx, cy), extent = ob.center, ob.radius
        # coarse cull on the bounding circle
        rel_x, rel_y = cx - ox, cy - oy
        if abs(dx * rel_y - dy * rel_x) > extent + 1e-6:
            continue
        if dx * rel_x + dy * rel_y < -extent:
            continue
        if isinstance(ob, Segment):
            s = np.linspace(0.0, 1.0, n)
            px = x1 + s * (x2 - x1)
            py = y1 + s * (y2 - y1)
            pitch = 2 * extent / (n - 1)
        else:
            phi = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
            px = cx + ob.radius * np.cos(phi)
            py = cy + ob.radius * np.sin(phi)
            pitch = 2 * math.pi * ob.radius / n
        vx, vy = px - ox, py - oy
        along = vx * dx + vy * dy
        perp = np.abs(dx * vy - dy * vx)
        near = (perp <= pitch) & (along > 0)
        if near.any():
            best = min(best, float(along[near].min()))
    return best


def weighted_mean_bruteforce(arrays, counts):
    """Scalar-by-scalar weighted mean of equally shaped arrays."""
    total = sum(counts)
    flat = [np.asarray(a, dtype=float).ravel() for a in arrays]
    out = np.empty_like(flat[0])
    for idx in range(out.size):
        acc = 0.0
        for a, n in zip(flat, counts):
            acc += a[idx] * n
        out[idx] = acc / total
    return out.reshape(np.shape(arrays[0]))


def mask_histogram(h_walls, v_walls):
    """Observer-frame label counts over all cells and the four cardinal headings.

    Reads wall bits straight from the arrays: for a robot facing north the
    front/right/back/left walls are N/E/S/W; each clockwise heading change
    shifts which physical wall is in front.
    """
    h = np.asarray(h_walls, dtype=bool)
    v = np.asarray(v_walls, dtype=bool)
    size = v.shape[0]
    counts = np.zeros(16, dtype=int)
    for j in range(size):
        for i in range(size):
            nesw = [h[j + 1, i], v[j, i + 1], h[j, i], v[j, i]]
            for facing in range(4):  # 0=N, 1=E, 2=S, 3=W
                front, right, back, left = (nesw[(facing + k) % 4] for k in range(4))
                counts[front * 1 + right * 2 + back * 4 + left * 8] += 1
    return counts


def numeric_grad(f, x, h=1e-4, entries=None):
    """Central difference of scalar ``f`` w.r.t. entries of array ``x`` (perturbed in place).

    ``entries`` restricts the check to the given index tuples; other entries stay zero.
    """
    g = np.zeros_like(x)
    if entries is None:
        entries = list(np.ndindex(x.shape))
    for i in entries:
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def relative_error(a, b, floor=1e-7):
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def mlp_loss(W1, b1, W2, b2, x, y, weight_decay):
    """Softmax cross-entropy of a one-hidden-layer ReLU MLP, written out directly."""
    h = np.maximum(x @ W1.T + b1, 0.0)
    z = h @ W2.T + b2
    zmax = z.max(axis=1, keepdims=True)
    logsumexp = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    ce = np.mean(logsumexp - z[np.arange(len(y)), y])
    return ce + 0.5 * weight_decay * (np.sum(W1 * W1) + np.sum(W2 * W2))
