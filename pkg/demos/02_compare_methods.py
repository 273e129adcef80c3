"""Train the comparison rows on a reduced benchmark and print the adaptation table.

A full-size run is what the acceptance suite does; this one shrinks the maps
and epochs so it finishes in a few minutes on a laptop CPU. At this budget
most rows sit near chance; the point is the workflow, not the numbers.
"""

from dataclasses import replace

from spatial_uda import adaptation_table
from spatial_uda.benchmark import METHODS, build_benchmark, default_train_config, run_method
from spatial_uda.evaluation import format_table

SEED = 0
data = build_benchmark(SEED, subset_size=256)

reports = {}
for method in METHODS:
    cfg = replace(default_train_config("full", SEED), epochs=8)
    target, run, _ = run_method(data, method, SEED, cfg=cfg)
    reports[method] = target
    print(f"{method:>14}: best epoch {run.best_epoch}, target accuracy {target.accuracy:.3f}")

print()
print(format_table(adaptation_table(reports)))
