"""Sweep the camera about its x axis and compare likelihood widths.

Corner pixels sit where the scene changes fastest, so a small rotation moves
them off their colour and the likelihood drops quickly.
"""
from pathlib import Path

import numpy as np

from nerfmcl import FeatureConfig, benchmark_dataset, likelihood_curve

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

ds, field = benchmark_dataset()
for strategy in ("orb", "orbrand", "rand", "mser", "mserrand"):
    c = likelihood_curve(field, ds, 0, strategy, n_pixels=1000, axis="x", range_deg=30, step_deg=1,
                         features=FeatureConfig(mser_max_area=1500))
    (OUT / f"likelihood_{strategy}.csv").write_text(c.to_csv())
    # widths are measured on the curve rescaled to [0, 1]
    y = (c.likelihood - c.likelihood.min()) / np.ptp(c.likelihood)
    bars = "".join(" .:-=+*#%@"[min(9, int(v * 9.99))] for v in y[15:46])
    print(f"{strategy:9s} fwhm {c.fwhm():5.2f} deg  |{bars}|  (-15..+15 deg)")
