"""Straight-line scalar oracle for the 4-point loss hand instances.

Pure-python arithmetic, no dpmkit imports: this is the independent
computation whose printed values are frozen into tests/test_losses.py.

    python3 tests/oracles/oracle_losses.py
"""

import math

GT = [(0.0, 0.0, 1.0), (0.0, 0.0, 2.0), (0.0, 0.0, 3.0), (0.0, 0.0, 4.0)]
PRED = [(0.0, 0.0, 1.5), (0.0, 0.0, 2.0), (0.0, 0.0, 3.0), (0.0, 0.0, 4.0)]


def norm(p):
    return math.sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2])


def l_reg_per_pixel(pred, gt):
    hp = sum(norm(p) for p in pred) / len(pred)
    hg = sum(norm(q) for q in gt) / len(gt)
    out = []
    for p, q in zip(pred, gt):
        d = [p[k] / hp - q[k] / hg for k in range(3)]
        out.append(norm(d))
    return out


def median(xs):
    s = sorted(xs)
    n = len(s)
    mid = n // 2
    return s[mid] if n % 2 else 0.5 * (s[mid - 1] + s[mid])


def l_rel(pred, gt):
    zp = median([norm(p) for p in pred])
    zg = median([norm(q) for q in gt])
    total = 0.0
    for p, q in zip(pred, gt):
        d = [p[k] / zp - q[k] / zg for k in range(3)]
        total += norm(d) / (norm(q) / zg)
    return total / len(gt)


if __name__ == "__main__":
    per_pixel = l_reg_per_pixel(PRED, GT)
    for i, v in enumerate(per_pixel):
        print(f"l_reg pixel {i}: {v!r}")
    print(f"l_reg mean: {sum(per_pixel) / len(per_pixel)!r}")
    print(f"l_rel: {l_rel(PRED, GT)!r}")
