"""
Training on planted ring data
=============================

A synthetic log plants a simple structure: each user walks a ring over
the item set, with some noise.  A model that learns the transition
pattern should beat the popularity baseline by a wide margin on held-out
next-item prediction.  This script trains the full model plus its two
single-module ablations and prints leave-one-out metrics for each.
"""

import numpy as np

from graphseqrec import (MetricsReport, TrainConfig, build_sequences,
                         leave_one_out, popularity_ranks, synth_generate,
                         train, variant_config)

log = synth_generate(num_users=200, num_items=100, noise=0.2, seed=0, seq_len=16)
dataset = leave_one_out(build_sequences(log, min_count=1))
print(f"dataset: {dataset.num_users} users, {dataset.num_items} items")

popularity = MetricsReport.from_ranks(popularity_ranks(dataset, "test"))
print(f"popularity baseline: hr@10={popularity.hr[10]:.3f} "
      f"ndcg@10={popularity.ndcg[10]:.3f}")

base = TrainConfig(dim=16, max_len=16, batch_size=128, rank=4, encoder_layers=1,
                   lambda1=0.1, lambda2=0.1, dropout=0.1, max_epochs=8,
                   patience=7, seed=0)

for variant in ("full", "no_agcl", "no_pge"):
    result = train(variant_config(base, variant), dataset)
    test = result.test_report
    print(f"{variant:8s} best epoch {result.state.best_epoch}: "
          f"hr@10={test.hr[10]:.3f} ndcg@10={test.ndcg[10]:.3f} "
          f"({test.hr[10] / max(popularity.hr[10], 1e-9):.1f}x popularity)")
