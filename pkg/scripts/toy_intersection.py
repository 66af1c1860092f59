"""Circle-ellipse intersection under the three solver modes."""
import argparse

from anmsolve.toy import solve_toy


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--order", type=int, default=20)
    ap.add_argument("--eps-rov", type=float, default=1e-6)
    args = ap.parse_args()
    rows = [("taylor", dict(use_pade=False)), ("pade", dict(use_pade=True)),
            ("equational", dict(equational=True))]
    print(f"{'mode':<12}{'iters':>6}{'residual':>12}{'time [s]':>10}   solution")
    for name, kw in rows:
        r = solve_toy(order=args.order, eps_rov=args.eps_rov, **kw)
        x, y = r.solution
        print(f"{name:<12}{r.iterations:>6}{r.residual:>12.2e}{r.wall_time:>10.3f}   ({x:.9f}, {y:.9f})")


if __name__ == "__main__":
    main()
