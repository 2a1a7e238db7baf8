"""Spectral gap, mixing time and Poisson-solution bounds along the diagonal q = t*1."""
import argparse

from qbcsma.fast_chain import mixing_time, omega_and_b, spectral_gap


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=2)
    ap.add_argument("--a", type=float, default=0.25)
    args = ap.parse_args()
    print("t,gap,gap*t^a,t_mix,t_mix*t^-a,Omega,B_1")
    for t in (10, 100, 1000, 10**4, 10**5):
        q = [t] * args.n
        gap = spectral_gap(q, args.a)
        tmix = mixing_time(q, args.a)
        omega, b = omega_and_b(q, args.a, gap=gap)
        print(f"{t},{gap:.6g},{gap * t**args.a:.4f},{tmix:.6g},{tmix * t**-args.a:.4f},"
              f"{omega:.6g},{b[0]:.6g}")


if __name__ == "__main__":
    main()
