"""Detection rate vs corruption size and verifier overhead, as CSV."""

import sys

from kernel_contracts.freivalds import (
    OVERHEAD_HEADER,
    SENSITIVITY_HEADER,
    VerifierConfig,
    overhead_benchmark,
    sensitivity_experiment,
    soundness_spot_check,
    to_csv,
)

if __name__ == "__main__":
    seeds = range(int(sys.argv[1]) if len(sys.argv) > 1 else 3)
    for seed in seeds:
        print(f"# sensitivity, shape (256,128,64), k=20, 40 trials, seed {seed}")
        rows = sensitivity_experiment(cfg=VerifierConfig(k=20, seed=seed))
        print(to_csv(rows, SENSITIVITY_HEADER), end="")
    print("# false positives over 500 correct products (k=40, n=256)")
    for fmt in ("FP32", "FP16"):
        n = 500 if fmt == "FP32" else 20
        print(f"{fmt}: {soundness_spot_check(n, VerifierConfig(k=40), product_format=fmt)}/{n}")
    print("# overhead relative to host FP32 matmul")
    print(to_csv(overhead_benchmark(), OVERHEAD_HEADER), end="")
