"""The whole pipeline at toy scale, in about a minute.

Every command-line stage is a plain function in ``latent_triplanes.pipeline``.
This script runs them in order on a few tiny scenes: generate data, pretrain
the autoencoder, fit tri-planes jointly with it, fit fresh scenes with the
learned bank, then score test views. The numbers are far from converged; the
point is to see the artifacts each stage leaves behind.

    python demos/03_tiny_pipeline.py [out_dir]
"""

import sys
import tempfile
from pathlib import Path

from latent_triplanes import pipeline
from latent_triplanes.config import RunConfig

cfg = RunConfig.from_dict(
    {
        "n_train": 3,
        "n_exploit": 2,
        "n_poses": 12,
        "image_side": 32,
        "latent_side": 8,
        "ae_widths": [16, 16],
        "ae_steps": 150,
        "plane_resolution": 16,
        "n_samples": 16,
        "warmup_steps": 30,
        "steps": 30,
        "exploit_steps": 40,
        "finetune_steps": 10,
    }
)
out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="tiny_run_"))

print("dataset     ", pipeline.stage_dataset(cfg, out))
print("pretrain-ae ", pipeline.stage_pretrain_ae(cfg, out))
pipeline.stage_train(cfg, out)
pipeline.stage_exploit(cfg, out)
print("eval        ", pipeline.stage_eval(cfg, out))

paths = pipeline.RunPaths(out, cfg.mode)
written = pipeline.stage_render(cfg, out, scene_id=cfg.n_train, pose_indices=[0])
print(f"\nrendered {[p.name for p in written]}")
print(f"run directory {out}:")
for path in sorted(paths.mode_dir.rglob("*")):
    if path.is_file():
        print("  ", path.relative_to(out))
