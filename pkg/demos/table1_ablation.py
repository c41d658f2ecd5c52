"""
Temporary teacher count ablation at desk scale
==============================================

Trains the default four-MLP ladder with 0, 1 and 2 temporary teachers plus
the independent baseline, all from one shared pretrained pivot, and prints
the best-epoch accuracy table with deltas against the baseline.

Pass an epoch count to shorten the run, e.g. ``python demos/table1_ablation.py 5``.
"""

import sys
import tempfile
from pathlib import Path

from orckd.config import preset, with_overrides
from orckd.metrics import summarize
from orckd.trainer import run_experiment

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 30
root = Path(tempfile.mkdtemp(prefix="orckd-table1-"))
pivot = root / "pivot.ckpt"

paths = []
for name in ("baseline_independent", "table1_k0", "table1_k1", "table1_k2"):
    cfg = with_overrides(preset(name), train__epochs=epochs, train__pretrain_epochs=3 * epochs,
                         train__output_dir=str(root / name), train__pivot_checkpoint=str(pivot))
    result = run_experiment(cfg)
    print(f"{name}: done, pivot {'loaded' if result.pretrain.loaded else 'pretrained'}")
    paths.append(result.metrics_path)

print()
print(summarize(paths))
