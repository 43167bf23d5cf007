"""Small models and random encoded batches for model-level tests."""

from __future__ import annotations

import numpy as np

from povbias import models as md
from povbias import text_repr as tr
from povbias.text_repr import EncodedBatch, TextEncoder, Vocabulary


def toy_encoder(vocab_size=50, max_len=6, sharing=md.WeightSharing.SEPARATE, channels=tr.CHANNELS):
    def vocab(prefix):
        return Vocabulary([tr.PAD, tr.UNK] + [f"{prefix}{i}" for i in range(vocab_size - 2)])

    vocabs = {ch: vocab(ch) for ch in tr.CHANNELS}
    sharing = md.WeightSharing(sharing)
    if sharing is md.WeightSharing.SHARE_ALL and len(channels) > 1:
        for ch in channels:
            vocabs[ch] = vocabs["word"]
    elif sharing is md.WeightSharing.SHARE_POS_LIWC and {"pos", "liwc"} <= set(channels):
        vocabs["liwc"] = vocabs["pos"]
    lexicon = tr.CategoryLexicon.from_rows([("x", ["A"])])
    return TextEncoder(vocabs, lexicon, max_len)


def toy_model(architecture, channels="wpl", hidden=8, embed=8, max_len=6, vocab_size=50,
              sharing=md.WeightSharing.SEPARATE, seed=0):
    config = md.ModelConfig(
        architecture=architecture,
        channels=channels,
        hidden_dim=hidden,
        attn_dim=hidden,
        embed_dim=embed,
        max_len=max_len,
        weight_sharing=sharing,
        seed=seed,
    )
    enc = toy_encoder(vocab_size, max_len, sharing, config.channels)
    return md.init_params(config, enc), enc


def random_batch(rng, n, max_len=6, vocab_size=50, min_len=1):
    lengths = rng.integers(min_len, max_len + 1, size=n)
    mask = np.arange(max_len)[None, :] < lengths[:, None]
    ids = [np.where(mask, rng.integers(2, vocab_size, size=(n, max_len)), 0) for _ in range(3)]
    return EncodedBatch(ids[0], ids[1], ids[2], mask)


def pad_batch(batch, extra):
    n = len(batch)
    z = np.zeros((n, extra), dtype=np.int64)
    return EncodedBatch(
        np.hstack([batch.word_ids, z]),
        np.hstack([batch.pos_ids, z]),
        np.hstack([batch.liwc_ids, z]),
        np.hstack([batch.mask, np.zeros((n, extra), dtype=bool)]),
    )


def randomize(params, rng, scale=0.5):
    """Perturb every tensor (biases and outputs included) away from its init."""
    for _, t in params.named():
        t.data[...] = rng.uniform(-scale, scale, size=t.shape)
    for emb in params.embeddings.values():
        emb.weights.data[tr.PAD_ID] = 0.0
