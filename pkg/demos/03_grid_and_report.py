"""A small experiment grid, written to CSV and summarised.

Rerunning the script resumes: cells already in results.csv are skipped.
"""
from pathlib import Path

from nerfmcl import GridSpec, benchmark_dataset, report, run_grid
from nerfmcl.harness import passes_table, summary_table

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

ds, field = benchmark_dataset()
spec = GridSpec(n_pixels=[50, 100], n_pts=[16], n_poses=[15], strategies=["orb", "rand", "mserrand"], seeds=4,
                dataset="bench", base={"max_iter": 20, "features": {"mser_max_area": 1500}})
rows = run_grid(spec, ds, field, OUT / "results.csv")
print(summary_table(rows))
print(passes_table(rows))
for path in report([OUT / "results.csv"], OUT / "report"):
    print("wrote", path)
