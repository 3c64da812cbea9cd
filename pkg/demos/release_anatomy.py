"""Anatomy of a signal release.

Zooms in on the mid-horizon release: the position held just before it, the
one-shot trade executed at the release, and the position carried into the
second period.  Across every simulated path the pre-release limit of the
continuous strategy coincides with the one-shot trade, so the strategy has
a single discontinuity (after the release) rather than two; the price, in
contrast, jumps by an amount driven by the surprise in the released signal.
"""

import numpy as np

from pcelab.engine import solve_pce
from pcelab.market import two_insider_reference
from pcelab.simulate import SimConfig, double_jump_report, simulate


def main():
    scenario = two_insider_reference()
    sol = solve_pce(scenario)
    samples = simulate(SimConfig(scenario, sol, seed=42, n_paths=100, grid=50))
    records = double_jump_report(samples)

    print("Release at t = 0.5, uninformed agent (agent 0), first 5 paths:")
    print(f"{'path':>5} {'pre':>9} {'trade':>9} {'post':>9} "
          f"{'|trade-pre|':>12} {'|post-trade|':>13}")
    for rec in records[:5]:
        pre, trade, post = rec["pre"][0, 0], rec["trade"][0, 0], rec["post"][0, 0]
        print(f"{rec['path_id']:>5} {pre:9.4f} {trade:9.4f} {post:9.4f} "
              f"{abs(trade - pre):12.1e} {abs(post - trade):13.1e}")

    first = max(float(np.abs(r["trade"] - r["pre"]).max()) for r in records)
    second = min(float(np.abs(r["post"] - r["trade"]).max()) for r in records)
    both = sum(r["flag"] for r in records)
    print(f"\nAcross all 100 paths: largest first move {first:.1e} "
          f"(numerically zero), smallest second move {second:.2e}, paths "
          f"with both moves nonzero: {both}.")
    print("The one-shot trade is exactly the continuation of the diffusive "
          "hedge; only the arrival of the realized signal forces a "
          "rebalancing.")


if __name__ == "__main__":
    main()
