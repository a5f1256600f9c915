"""A small support-recovery study, end to end.

Every replicate draws a fresh dataset, picks lambda for each method by
5-fold cross-validation, refits, and asks whether the k largest entries
sit on the true support.  The report carries raw per-replicate rows and
aggregated cells, and can be written to CSV.

This is a desk-sized version (a couple of minutes on one core).  The same
study at full size is ``trimreg exp support-recovery --preset equicorrelated``.

    python demos/02_support_recovery.py [out_dir]
"""

import sys
import time

from trimreg.experiments import ExperimentPlan, run_support_recovery

plan = ExperimentPlan(
    experiment_id="demo-recovery",
    design_kind="M2",
    theta_cov=0.7,
    dims=[[32, 3]],
    n_factors=[5, 10, 20],
    replicates=10,
    methods=["trimmed", "lasso", "scad", "mcp"],
)
print(f"n grid for (p, k) = (32, 3): {plan.n_values(32, 3)}")

start = time.perf_counter()
report = run_support_recovery(plan)
print(f"{len(report.raw)} fits in {time.perf_counter() - start:.0f} s\n")

print(f"{'method':8s}" + "".join(f"{'n=' + str(n):>8s}" for n in plan.n_values(32, 3)))
for method in plan.methods:
    probs = [report.success(method, n=n) for n in plan.n_values(32, 3)]
    print(f"{method:8s}" + "".join(f"{p:8.2f}" for p in probs))
print("\ntrimmed/SCAD/MCP are scored on the top-k entries, lasso on exact zeros")

if len(sys.argv) > 1:
    for path in report.write(sys.argv[1]):
        print("wrote", path)
