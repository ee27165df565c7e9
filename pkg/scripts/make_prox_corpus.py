"""Generate the golden corpus for the pointwise composite prox by brute force.

For each case the objective

    J(a, b) = F*(-a + H(b)) + (a - at)^2 / (2 sigma) + |b - bt|^2 / (2 sigma)

is minimized by a zooming grid search in extended precision over ``a`` and the
signed length of ``b`` along ``bt`` (J is invariant under rotations about that
ray, so the minimizer lies on it). No Newton step or optimality condition is
used. Output: tests/data/prox_corpus.csv.
"""
import csv
import sys
from pathlib import Path

import numpy as np

LD = np.longdouble
N = 161
WINDOW = 30  # half-width of the zoomed box, in grid spacings


def objective(A, B, at, btn, sigma, r, q, k, cf):
    p = q / (q - 1)
    c = -A + k * np.abs(B) ** r / r
    fstar = cf ** (1 - p) * np.maximum(c, 0) ** p / p
    return fstar + (A - at) ** 2 / (2 * sigma) + (B - btn) ** 2 / (2 * sigma)


def grid_search(at, btn, sigma, r, q, k, cf):
    at, btn, sigma, r, q, k, cf = (LD(v) for v in (at, btn, sigma, r, q, k, cf))
    p = q / (q - 1)
    c0 = max(-at + k * btn**r / r, LD(0))
    a_lo, a_hi = at - 1, at + 1 + sigma * (c0 + 1) ** (p - 1) / cf ** (p - 1)
    b_lo, b_hi = -btn - 1, btn + 1
    for it in range(2000):
        A = np.linspace(a_lo, a_hi, N, dtype=LD)
        B = np.linspace(b_lo, b_hi, N, dtype=LD)
        J = objective(A[:, None], B[None, :], at, btn, sigma, r, q, k, cf)
        i, j = np.unravel_index(np.argmin(J), J.shape)
        if it == 0 and (i in (0, N - 1) or j in (0, N - 1)):
            raise RuntimeError("minimizer on the initial box boundary")
        da, db = A[1] - A[0], B[1] - B[0]
        if i in (0, N - 1) or j in (0, N - 1):
            # the valley left the box: recenter without shrinking
            half_a, half_b = (a_hi - a_lo) / 2, (b_hi - b_lo) / 2
        else:
            half_a, half_b = WINDOW * da, WINDOW * db
        a_lo, a_hi = A[i] - half_a, A[i] + half_a
        b_lo, b_hi = B[j] - half_b, B[j] + half_b
        if da < 1e-14 * max(1, abs(A[i])) and db < 1e-14 * max(1, abs(B[j])):
            break
    else:
        raise RuntimeError("grid search did not settle")
    return float(A[i]), float(B[j])


def main(out):
    rng = np.random.default_rng(20240611)
    values = (1.5, 2.0, 3.0)
    combos = [(r, q, s) for r in values for q in values for s in (0.1, 1.0, 10.0)]
    rows = []
    for case in range(500):
        r, q, sigma = combos[case % len(combos)]
        d = 1 + case % 2
        k = 1.0 if case % 3 else float(rng.uniform(0.5, 2.0))
        cf = 1.0 if case % 5 else float(rng.uniform(0.5, 2.0))
        bt = rng.uniform(-2, 2, size=d)
        if case % 7 == 0:
            bt[:] = 0.0
        if case % 4 == 3:
            # zero set: -at + H(bt) <= 0
            at = k * np.linalg.norm(bt) ** r / r + float(rng.uniform(0.0, 2.0))
        else:
            at = float(rng.uniform(-3, 3))
        btn = float(np.linalg.norm(bt))
        a, beta = grid_search(at, btn, sigma, r, q, k, cf)
        b = beta * bt / btn if btn > 0 else np.zeros(d)
        zero = -at + k * btn**r / r <= 0
        bt2 = [float(v) for v in bt] + [0.0] * (2 - d)
        b2 = [float(v) for v in b] + [0.0] * (2 - d)
        rows.append([case, r, q, sigma, k, cf, d, float(at), *bt2, a, *b2, int(zero)])
        if case % 50 == 0:
            print(case, file=sys.stderr)
    header = ["case", "r", "q", "sigma", "k", "cf", "d", "a_tilde", "b_tilde_0", "b_tilde_1", "a", "b_0", "b_1",
              "zero_set"]
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "tests" / "data" / "prox_corpus.csv")
