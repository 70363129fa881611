"""Two ways to turn token vectors into one sentence vector."""
import numpy as np

from claimrank.encoder import (Vocabulary, attention_pool, bilstm_forward, embed_sentence,
                               init_params, mean_pool)

# Mean pooling averages the unmasked rows
H = np.array([[1.0, 3.0], [3.0, 5.0]])
print(mean_pool(H, np.array([1.0, 1.0])))   # [2. 4.]
print(mean_pool(H, np.array([1.0, 0.0])))   # [1. 3.]

# The attention head runs a BiLSTM over the tokens and learns where to look.
rng = np.random.default_rng(0)
params = init_params(vocab_size=10, dim=4, hidden=3, pooling="attention", seed=0)
params.attn_w[:] = rng.normal(size=params.attn_w.shape)
tokens = rng.normal(size=(5, 4))
mask = np.array([1, 1, 1, 0, 0.0])
states = bilstm_forward(tokens, params, mask)
print("BiLSTM states:", states.shape)          # (5, 6): forward and backward halves
print("pooled:", attention_pool(states, mask, params).round(4))

# Whole sentences go through a vocabulary and come out unit length
vocab = Vocabulary.build(["lemon water cures cancer", "vaccines contain microchips"])
for pooling in ("mean", "attention"):
    p = init_params(len(vocab), 8, 4, pooling, seed=1)
    emb = embed_sentence("Lemon water cures cancer!", vocab, p, max_len=16)
    print(pooling, emb.vector.shape, round(float(np.linalg.norm(emb.vector)), 12))
