"""End-to-end smoke tests for the python bindings.

The heavy numerical checks live in the C++ suites; these only confirm that
the bound surface works from python: tokenizer round-trips, training reduces
loss, pruning hits its targets, factorization round-trips, and checkpoints
survive save/load.
"""

import math

import pytest

from prunelab import Model, ModelConfig, PrunelabError, Vocabulary

LINES = [
    "the cat sat on the mat",
    "a dog ran over the hill",
    "the cat and the dog met",
    "every mat was flat and wide",
    "dogs chase cats over hills",
    "the hill was wide and green",
    "cats nap on warm mats",
    "a green hill hides the den",
    "wide mats cover the floor",
    "the dog met every cat",
    "green hills roll wide",
    "dens keep cats warm",
]


def tiny_config():
    cfg = ModelConfig()
    cfg.vocab_size = 300
    cfg.embed_dim = 8
    cfg.num_blocks = 1
    cfg.num_heads = 2
    cfg.head_dim = 4
    cfg.ffn_dim = 12
    cfg.max_seq_len = 16
    cfg.seed = 3
    return cfg


@pytest.fixture(scope="module")
def vocab():
    return Vocabulary.train(LINES, 300)


def row_for(vocab, text):
    ids = [Vocabulary.bos] + vocab.encode(text) + [Vocabulary.eos]
    return ids[:-1], ids[1:]


def test_vocabulary_roundtrip(vocab):
    assert vocab.size() <= 300
    for line in LINES + ["hello unseen world"]:
        assert vocab.decode(vocab.encode(line)) == line
    assert len({Vocabulary.pad, Vocabulary.unk, Vocabulary.bos, Vocabulary.eos}) == 4


def test_untrained_loss_is_uniform(vocab):
    model = Model(tiny_config())
    inputs, targets = row_for(vocab, LINES[0])
    loss = model.loss([inputs], [targets])
    assert abs(loss - math.log(300)) < 0.05 * math.log(300)
    out = model.logits([inputs])
    assert len(out) == 1 and len(out[0]) == len(inputs) and len(out[0][0]) == 300


def test_training_reduces_loss(vocab):
    model = Model(tiny_config())
    losses = model.train_on(vocab, LINES, steps=40, batch_size=4, seed=7,
                            lr=0.1, warmup_steps=5)
    assert len(losses) == 40
    assert model.step == 40
    assert sum(losses[-5:]) < sum(losses[:5])


def test_pruning_hits_targets(vocab):
    model = Model(tiny_config())
    model.train_on(vocab, LINES, steps=10, batch_size=4, seed=7, lr=0.1,
                   warmup_steps=5)
    before = model.effective_params()
    events = model.prune_to(0.5)
    assert {e["layer"] for e in events} == set(model.layer_names())
    w1 = next(e for e in events if e["layer"] == "block0.ffn.w1")
    assert w1["zeros"] == w1["total"] // 2
    assert model.layer_sparsity("block0.ffn.w1") == pytest.approx(0.5)
    assert model.effective_params() < before


def test_data_criterion_needs_batches(vocab):
    model = Model(tiny_config())
    with pytest.raises(PrunelabError):
        model.prune_to(0.5, criterion="data")
    inputs, targets = row_for(vocab, LINES[0])
    events = model.prune_to(0.5, criterion="data", batches=[([inputs], [targets])])
    assert all(e["achieved"] >= 0.0 for e in events)


def test_bad_arguments_raise(vocab):
    model = Model(tiny_config())
    with pytest.raises(PrunelabError):
        model.prune_to(0.5, method="bogus")
    with pytest.raises(PrunelabError):
        model.logits([[1, 2, 3], [1, 2]])


def test_factorize_densify_roundtrip(vocab):
    model = Model(tiny_config())
    model.train_on(vocab, LINES, steps=10, batch_size=4, seed=7, lr=0.1,
                   warmup_steps=5)
    base = model.perplexity(vocab, LINES)
    model.factorize(threads=2)
    factored = model.perplexity(vocab, LINES)
    assert factored == pytest.approx(base, rel=1e-2)
    model.densify()
    assert model.perplexity(vocab, LINES) == factored


def test_flop_report_sums(vocab):
    model = Model(tiny_config())
    counts = model.flops()
    total = counts.pop("total")
    assert total == sum(counts.values())
    assert "block0.attn.attention" in counts


def test_save_load_roundtrip(tmp_path, vocab):
    model = Model(tiny_config())
    model.train_on(vocab, LINES, steps=10, batch_size=4, seed=7, lr=0.1,
                   warmup_steps=5)
    model.prune_to(0.4)
    path = str(tmp_path / "smoke.ckpt")
    model.save(path)
    back = Model.load(path)
    inputs, targets = row_for(vocab, LINES[1])
    assert back.loss([inputs], [targets]) == model.loss([inputs], [targets])
    assert back.step == model.step
    assert back.effective_params() == model.effective_params()
