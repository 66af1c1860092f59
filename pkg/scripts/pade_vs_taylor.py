"""Iteration counts with and without Padé steps across the FEM benchmark cases."""
import argparse

from anmsolve.fem.scenarios import benchmark_suite, run_case


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eps-rov", type=float, default=1e-4)
    ap.add_argument("--order", type=int, default=20)
    ap.add_argument("--no-twist", action="store_true", help="skip the twist-and-bend cases")
    args = ap.parse_args()
    print(f"{'case':<24}{'taylor':>8}{'pade':>6}{'saved':>7}")
    saved = []
    for name, mesh, cfg in benchmark_suite(twist=not args.no_twist):
        counts = [run_case(mesh, cfg, eps_rov=args.eps_rov, order=args.order,
                           use_pade=p).iterations for p in (False, True)]
        saved.append(counts[0] - counts[1])
        print(f"{name:<24}{counts[0]:>8}{counts[1]:>6}{saved[-1]:>7}")
    mean = sum(saved) / len(saved)
    print(f"mean iterations saved by Padé: {mean:.2f} over {len(saved)} cases")


if __name__ == "__main__":
    main()
