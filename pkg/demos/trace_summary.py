"""Run a good and a bad kernel against C-CMP-02 and summarize the traces."""

import tempfile
from pathlib import Path

from kernel_contracts.harness import packaged_contracts, run_protocol
from kernel_contracts.kernel_zoo import get_impl
from kernel_contracts.trace import TraceWriter, read_traces, summarize_traces

if __name__ == "__main__":
    contract = packaged_contracts()["C-CMP-02"]
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "demo.jsonl"
        with TraceWriter(path, mode="w") as w:
            for impl_id in ("reduce.good", "reduce.bad"):
                rep = run_protocol(contract, get_impl(impl_id), seed=0, sample_budget=64, sink=w)
                print(f"{impl_id:<12} {rep.verdict:<10} {rep.signature_details}")
        records, diags = read_traces(path)
    print(f"{len(records)} records, {len(diags)} diagnostics")
    for (cid, impl), agg in summarize_traces(records).items():
        hist = {k: v for k, v in agg["residual_histogram"].items() if v}
        print(f"{cid} {impl:<12} runs={agg['runs']} fails={agg['fails']} "
              f"max={agg['max_residual']:.3g} hist={hist}")
