"""Three-state calibration for every shipped contract that has a triple."""

import sys
import time

from kernel_contracts.harness import packaged_contracts, three_state_calibrate
from kernel_contracts.kernel_zoo import TRIPLES, triple_for


def main(budget=256, seed=0):
    contracts = packaged_contracts()
    print(f"{'contract':<28} {'separated':<9} {'good':<11} {'bad':<11} {'baseline':<9} secs")
    for cid in sorted(contracts):
        try:
            triple_for(cid)
        except KeyError:
            print(f"{cid:<28} (no zoo triple)")
            continue
        t0 = time.perf_counter()
        try:
            v = three_state_calibrate(contracts[cid], seed=seed, sample_budget=budget)
        except Exception as e:  # custom protocols and missing oracles
            print(f"{cid:<28} skipped: {type(e).__name__}: {e}")
            continue
        s = v.per_state
        print(f"{cid:<28} {str(v.separated):<9} {s['good']['verdict']:<11} {s['bad']['verdict']:<11} "
              f"{'smoke-fail' if not s['baseline']['smoke_pass'] else 'smoke-pass':<9} "
              f"{time.perf_counter() - t0:.1f}")
    print(f"{len(TRIPLES)} triples registered")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 256)
