"""Exact top-k search and fusing the rankings of several models."""
import numpy as np

from claimrank.ensemble import FusionConfig, ModelRun, fuse
from claimrank.index import RankedList, build_index, search_topk

rng = np.random.default_rng(0)
vectors = rng.normal(size=(1000, 32))
index = build_index(zip(range(1000), vectors))

# Querying with a stored vector finds it first
hit = search_topk(index, vectors[123], k=3)
print(hit.hits[0])

# Identical rows tie, and ties go to the smaller id
tied = build_index([(30, [1.0, 0.0]), (4, [1.0, 0.0]), (9, [0.0, 1.0])])
print(search_topk(tied, [1.0, 0.2], k=3).ids)  # [4, 30, 9]

# Score-sum fusion adds each candidate's cosine over the runs that returned it.
a = ModelRun("A", {1: RankedList(1, [(100, 0.9), (200, 0.5)])})
b = ModelRun("B", {1: RankedList(1, [(200, 0.8), (300, 0.7)])})
print(fuse([a, b], FusionConfig(k_out=2))[1].hits)        # 200 (1.3) then 100 (0.9)
print(fuse([a, b], FusionConfig(method="rrf"))[1].hits)
