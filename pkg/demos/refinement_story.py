"""From many small releases to a continuous information flow.

Builds the dyadic refinement family with constant risk-tolerance weighted
precision, shows the cumulative signal precision converging to its closed
form as the number of releases doubles, and classifies the terminal
behavior for three precision growth exponents.
"""

import numpy as np

from pcelab.limits import (
    classify_t1,
    power_limit_spec,
    reference_limit_spec,
    signal_error_rows,
    sup_error_rows,
)


def main():
    spec = reference_limit_spec()
    print("Reference family (constant weighted precision), d = 1:")
    sup = {}
    for _, N, _, _, value in sup_error_rows(spec):
        sup[N] = max(sup.get(N, 0.0), value)
    print(f"{'releases':>9} {'sup precision error':>20}")
    for N in sorted(sup):
        print(f"{2**N:>9} {sup[N]:>20.2e}")
    print("Each doubling of the release count halves the distance to the "
          "continuous-information benchmark.")

    print("\nEffective-signal mean-square error under shared drivers:")
    for _, N, t, _, value in signal_error_rows(spec, n_samples=2000, seed=0):
        print(f"  N = {N:>2}: E|J^N - J|^2 at t = {t} is {value:.2e}")

    print("\nTerminal behavior by precision growth exponent a, "
          "weighted precision ~ (1-t)^-a:")
    for a in (0.4, 0.75, 1.2):
        c = classify_t1(power_limit_spec(a))
        q = "infinite" if np.isinf(c.q_value) else f"{c.q_value:.3f}"
        print(f"  a = {a:<5} terminal signal {c.terminal_signal:<16} "
              f"drift energy {c.drift_energy:<9} Q = {q}")
    print("Below exponent 1/2 the terminal signal stays noisy; above it the "
          "factor value is fully revealed, and past exponent 1 the "
          "information drift carries infinite energy.")


if __name__ == "__main__":
    main()
