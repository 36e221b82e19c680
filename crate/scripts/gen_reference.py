"""Generate high-precision reference values for the special-function tests.

Writes crates/core/tests/data/specfun_reference.csv using mpmath at 50 digits.
Also prints the constant tables embedded in crates/core/src/specfun.rs.
"""
import csv
import os
import sys

import mpmath as mp
import numpy as np

mp.mp.dps = 50
HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, "..", "crates", "core", "tests", "data", "specfun_reference.csv")


def rows():
    rng = np.random.default_rng(20180916)
    xs = np.logspace(-3, 6, 1000)
    for x in xs:
        x = float(x)
        mx = mp.mpf(x)
        yield ("ln_gamma", x, 0.0, float(mp.loggamma(mx)))
        yield ("digamma", x, 0.0, float(mp.digamma(mx)))
        yield ("trigamma", x, 0.0, float(mp.polygamma(1, mx)))
    for _ in range(1000):
        a = float(10 ** rng.uniform(np.log10(0.05), 3))
        x = float(a * 10 ** rng.uniform(-1.5, 0.6))
        yield ("gamma_p", a, x, float(mp.gammainc(mp.mpf(a), 0, mp.mpf(x), regularized=True)))


def tables():
    print("// zeta(k) - 1, k = 2..")
    for k in range(2, 41):
        print(f"    {float(mp.zeta(k) - 1)!r},")
    root = mp.findroot(mp.digamma, 1.46)
    hi = float(root)
    lo = float(root - mp.mpf(hi))
    print(f"// digamma root hi={hi!r} lo={lo!r}")
    print("// taylor coefficients psi^(k)(x0)/k!, k = 1..")
    for k in range(1, 31):
        print(f"    {float(mp.polygamma(k, root) / mp.factorial(k))!r},")


if __name__ == "__main__":
    if len(sys.argv) > 1 and sys.argv[1] == "tables":
        tables()
    else:
        with open(OUT, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["function", "arg1", "arg2", "expected"])
            for name, a1, a2, e in rows():
                w.writerow([name, repr(a1), repr(a2), repr(e)])
