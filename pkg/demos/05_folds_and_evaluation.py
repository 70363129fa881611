"""Cross-validated models, their fused ranking, and the submission file."""
import json
import tempfile
from pathlib import Path

import numpy as np

from claimrank.corpus import TextView
from claimrank.evaluation import GoldMapping, evaluate, write_predictions
from claimrank.pipeline import fold_ensemble
from claimrank.synthetic import make_separable_corpus
from claimrank.training import TrainConfig, kfold_split

print(np.bincount(kfold_split(11, 5, seed=42)))  # every fold gets 2 or 3 pairs

corpus = make_separable_corpus(n_pairs=40, n_distractors=60)
config = TrainConfig(batch_size=8, epochs=6, warmup_steps=5, lr_backbone=3e-3,
                     lr_custom=3e-3, embed_dim=16, hidden=8, max_len=8)
posts = set(corpus.gold())
outcomes, fused = fold_ensemble(corpus, TextView(), config, posts, k_folds=5)
gold = GoldMapping.from_corpus(corpus, posts)
for i, outcome in enumerate(outcomes):
    print(f"fold model {i}: S@10 {outcome.report.s_at_k_avg:.3f}")
report = evaluate(fused, gold, k=10)
print(report.format())

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "predictions.json"
    write_predictions(fused, 10, path)
    first = next(iter(json.loads(path.read_text()).items()))
    print(first)
