"""Regenerates svr_reference.json with an interior-point QP solver.

    python3 gen_svr_reference.py > svr_reference.json
"""
import json
import math
import random

import numpy as np
from cvxopt import matrix, solvers

solvers.options["show_progress"] = False
solvers.options["abstol"] = 1e-12
solvers.options["reltol"] = 1e-12
solvers.options["feastol"] = 1e-12
solvers.options["maxiters"] = 200


def median_sigma(x):
    d = sorted(math.dist(x[i], x[j]) for i in range(len(x)) for j in range(i + 1, len(x)))
    if not d:
        return 1.0
    m = len(d)
    med = d[m // 2] if m % 2 else 0.5 * (d[m // 2 - 1] + d[m // 2])
    return med if med > 0 else 1.0


def solve(x, y, c, eps, sigma):
    n = len(x)
    k = np.array([[math.exp(-math.dist(a, b) ** 2 / sigma**2) for b in x] for a in x])
    s = np.concatenate([np.ones(n), -np.ones(n)])
    q = np.outer(s, s) * np.block([[k, k], [k, k]])
    p = np.concatenate([eps - np.array(y), eps + np.array(y)])
    g = np.vstack([-np.eye(2 * n), np.eye(2 * n)])
    h = np.concatenate([np.zeros(2 * n), c * np.ones(2 * n)])
    sol = solvers.qp(matrix(q), matrix(p), matrix(g), matrix(h), matrix(s.reshape(1, -1)), matrix(0.0))
    assert sol["status"] == "optimal", sol["status"]
    a = np.array(sol["x"]).ravel()
    beta = a[:n] - a[n:]
    obj = float(np.dot(y, beta) - eps * np.abs(beta).sum() - 0.5 * beta @ k @ beta)
    bias = float(np.array(sol["y"]).ravel()[0])
    return beta.tolist(), obj, bias


def main():
    rng = random.Random(20240611)
    problems = []
    while len(problems) < 50:
        n = rng.randint(2, 12)
        x = [[rng.uniform(0, math.pi / 4), rng.uniform(0, math.pi / 2)] for _ in range(n)]
        y = [rng.choice([-1.0, 1.0]) for _ in range(n)]
        c = rng.choice([1.0, 10.0, 100.0])
        eps = rng.choice([0.0, 0.05, 0.1, 0.3])
        sigma = median_sigma(x)
        beta, obj, bias = solve(x, y, c, eps, sigma)
        free = [i for i, b in enumerate(beta) if 1e-6 * c < abs(b) < c * (1 - 1e-6)]
        if not free:
            continue  # bias not unique
        problems.append(
            {"x": x, "y": y, "c": c, "epsilon": eps, "sigma": sigma, "beta": beta, "dual_objective": obj, "bias": bias}
        )
    json.dump({"problems": problems}, __import__("sys").stdout, indent=1)


if __name__ == "__main__":
    main()
