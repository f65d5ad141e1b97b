"""Naive-loop reference implementations of the training losses.

Pure Python math over lists; each mirrors the written formula directly.
"""

import math

import numpy as np


def _dot(a, b):
    return sum(float(x) * float(y) for x, y in zip(a, b))


def _paired(image_ids):
    # next view of the same image, cyclically in order of appearance
    pos = {}
    for img in dict.fromkeys(image_ids):
        rows = [i for i, x in enumerate(image_ids) if x == img]
        for k, r in enumerate(rows):
            pos[r] = rows[(k + 1) % len(rows)]
    return pos


def simclr(rows, image_ids, tau):
    image_ids = list(np.asarray(image_ids).tolist())
    pos = _paired(image_ids)
    total = 0.0
    for a in range(len(rows)):
        denom = sum(math.exp(_dot(rows[a], rows[b]) / tau) for b in range(len(rows)) if b != a)
        num = math.exp(_dot(rows[a], rows[pos[a]]) / tau)
        total += -math.log(num / denom)
    return total / len(rows)


def supcon(rows, labels, tau):
    labels = list(np.asarray(labels).tolist())
    total = 0.0
    for a in range(len(rows)):
        denom = sum(math.exp(_dot(rows[a], rows[b]) / tau) for b in range(len(rows)) if b != a)
        positives = [p for p in range(len(rows)) if p != a and labels[p] == labels[a]]
        acc = 0.0
        for p in positives:
            acc += math.log(math.exp(_dot(rows[a], rows[p]) / tau) / denom)
        total += -acc / len(positives)
    return total / len(rows)


def cls_align(student, teacher, exclude_same_view=False):
    per_image = []
    for s_views, t_views in zip(student, teacher):
        terms = []
        for ti, t in enumerate(t_views):
            for si, s in enumerate(s_views):
                if exclude_same_view and si == ti:
                    continue
                terms.append(1.0 - _dot(s, t))
        per_image.append(sum(terms) / len(terms))
    return sum(per_image) / len(per_image)


def patch_align(student, teacher, masks):
    per_image = []
    for s, t, m in zip(student, teacher, masks):
        m = sorted(set(int(i) for i in m))
        if not m:
            continue
        per_image.append(sum(1.0 - _dot(s[i], t[i]) for i in m) / len(m))
    return sum(per_image) / len(per_image)


def coding_rate(z, eps):
    """Dense d-side log-det via eigenvalues of the symmetric matrix."""
    z = np.asarray(z, dtype=np.float64)
    b, d = z.shape
    m = np.eye(d) + (d / (b * eps)) * (z.T @ z)
    return -0.5 * float(np.sum(np.log(np.linalg.eigvalsh(m))))


def finite_difference(f, x, h=1e-6):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        up = f(x)
        x[i] = orig - h
        down = f(x)
        x[i] = orig
        g[i] = (up - down) / (2 * h)
    return g
