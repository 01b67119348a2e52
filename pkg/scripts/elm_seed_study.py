"""How often a random ELM hidden layer reaches a given accuracy.

Usage: python3 scripts/elm_seed_study.py [--eps 0.1] [--points 10] [--gain 2] [--seeds 100]
"""
import argparse

import numpy as np

from dpinn_lab.elm import assemble_elm_pinn, elm_predict, solve_exact, solve_pinv
from dpinn_lab.errors import SingularSystemError
from dpinn_lab.problems import SteadyAdvDiff, exact_steady


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--eps", type=float, default=0.1)
    ap.add_argument("--points", type=int, default=10)
    ap.add_argument("--gain", type=float, default=2.0)
    ap.add_argument("--seeds", type=int, default=100)
    ap.add_argument("--tol", type=float, default=1e-2)
    args = ap.parse_args()

    p = SteadyAdvDiff(eps=args.eps)
    pts = (np.arange(args.points) + 0.5) / args.points
    x = np.linspace(0.0, 1.0, 1001)
    print("seed,exact_error,pinv_error")
    n_ok = 0
    for seed in range(args.seeds):
        net, system = assemble_elm_pinn(p, pts, args.points + 2, seed=seed, gain=args.gain)
        try:
            e_exact = np.max(np.abs(elm_predict(net.with_weights(solve_exact(system)), x)
                                    - exact_steady(p, x)))
        except SingularSystemError:
            e_exact = float("nan")
        e_pinv = np.max(np.abs(elm_predict(net.with_weights(solve_pinv(system)), x)
                               - exact_steady(p, x)))
        n_ok += bool(e_exact < args.tol)
        print(f"{seed},{e_exact:.6g},{e_pinv:.6g}")
    print(f"# {n_ok}/{args.seeds} seeds below {args.tol:g} with the square solve")


if __name__ == "__main__":
    main()
