"""A few minutes of GDAS search on a handful of phantoms, then the derived genotype.

    python demos/toy_search.py
"""
import torch

from planeloc.phantom import generate_phantom
from planeloc.pipeline import split_cases
from planeloc.qlearn import TrainerConfig, run_search

torch.set_num_threads(1)

cfg = TrainerConfig(obs_size=16, channels=2, stem_stride=2, shared_layout="N", unique_layout="R",
                    n_envs=2, batch=8, horizon_train=10, horizon_test=10, search_epochs=3,
                    lr_weights=1e-3, step_sizes=(1.5, 1.5, 1.5, 0.3))
splits = split_cases([generate_phantom(i) for i in range(6)], 4, 2, 0)
res = run_search(splits.train, splits.val, cfg,
                 log=lambda e: print(f"epoch {e.epoch} val reward {e.accumulated_reward:+.1f} SAD {e.mean_sad:.2f}"))
print(f"selected epoch {res.epoch}")
print(res.genotype.to_text())
