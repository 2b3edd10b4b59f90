"""
Sweeping one knob at a time
===========================

Batch size on the raw-only baseline, averaged over a few paired seeds.
The same sweep is available from the command line as
``capforge ablate --axis batch-size --grid 8,32,128 --seeds 0..2``.
"""

import tempfile
from pathlib import Path

from capforge.toyclip import ViewPolicy
from capforge.toyclip.ablation import Axis, ablation_sweep, mean_by_setting, write_ablation_csv

rows = ablation_sweep(Axis.BATCH_SIZE, [8, 32, 128], policy=ViewPolicy(0), seeds=range(3), directions=("i2t",))
for setting, r1 in mean_by_setting(rows).items():
    print(f"batch {setting:4d}: mean I2T R@1 {r1:.1f}")

out = write_ablation_csv(rows, Path(tempfile.mkdtemp()) / "batch_size.csv")
print(out.read_text().splitlines()[:3])
