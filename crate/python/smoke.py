"""Smoke test for the pycatgan extension module.

Build and install it first:
    pip install --no-build-isolation ./crates/python
then run:
    python python/smoke.py
"""

import json
import math
import pathlib
import tempfile

import pycatgan as cg

ROOT = pathlib.Path(__file__).resolve().parent.parent
LN2 = math.log(2.0)


def check(cond, msg):
    if not cond:
        raise SystemExit(f"FAIL: {msg}")
    print(f"ok   {msg}")


def models():
    vocab = cg.Vocabulary.synthetic(4)
    check(vocab.size == 6 and vocab.pad_id == 4 and vocab.bos_id == 5, "synthetic vocabulary layout")
    check(vocab.decode(vocab.encode("0 3 1")) == "0 3 1", "encode/decode round trip")

    oracle = cg.Oracle(2, 4, 8, seed=1)
    seqs = oracle.sample(0, 5, 3, seed=2)
    check(len(seqs) == 5 and all(len(s) == 3 for s in seqs), "oracle samples have the requested shape")
    check(all(lp < 0 for lp in oracle.log_probs(0, seqs)), "oracle log-probabilities are negative")

    gen = cg.Generator(vocab.size, 2, vocab.bos_id, seed=3, emb_dim=8, mem_dim=8, banned=[vocab.pad_id, vocab.bos_id])
    samples = gen.generate(1, 4, 3, tau=2.0, seed=4)
    check(all(len(ids) == 3 and len(rows) == 3 for ids, rows in samples), "generator output shapes")
    check(all(abs(sum(r) - 1.0) < 1e-9 for _, rows in samples for r in rows), "relaxed rows lie on the simplex")
    check(all(t < 4 for ids, _ in samples for t in ids), "banned tokens are never sampled")
    every = [[a, b, c] for a in range(4) for b in range(4) for c in range(4)]
    mass = sum(math.exp(lp) for lp in gen.log_probs(every, [0] * len(every)))
    check(abs(mass - 1.0) < 1e-6, "generator probabilities sum to one")
    check(cg.nll_div(gen, 0, 200, 3, seed=5) > 0, "NLL_div is positive")
    check(cg.nll_oracle(oracle, gen, 0, 200, 3, seed=6) > 0, "NLL_oracle is positive")

    disc = cg.Discriminator(vocab.size, seed=7)
    check(len(disc.discriminate([[0, 1, 2, 3], [3, 3, 3, 3]])) == 2, "discriminator scores a batch")


def losses():
    check(abs(cg.loss_ra([0.5, 0.5], [0.5, 0.5]) - 2 * LN2) < 1e-12, "pair loss symmetric point")
    sym = [([1.0], [1.0]), ([1.0], [1.0])]
    check(abs(cg.d_loss_catra(sym) - 6 * LN2) < 1e-12, "CatRa symmetric point")
    check(abs(cg.g_loss_catrs(sym) - 3 * LN2) < 1e-12, "CatRS symmetric point")
    batch = [([0.1, 2.0], [-1.0, 0.3]), ([1.5], [0.0, 0.2])]
    check(cg.g_loss_catra(batch) == -cg.d_loss_catra(batch), "generator CatRa negates discriminator CatRa")
    check(cg.temperature(100.0, 2000, 0) == 1.0 and cg.temperature(100.0, 2000, 2000) == 100.0, "schedule endpoints")
    check(cg.temperature(100.0, 2000, 2000, offset=1) == 100.0, "schedule clamps past the end")
    check(cg.harmonic_mean([0.4, 0.6]) == 0.48, "harmonic mean")
    check(cg.bleu([[0, 1, 2]], [[0, 1, 2]], 2) == 1.0, "BLEU of an exact match")
    try:
        cg.bleu([[0]], [[0]], 7)
    except ValueError:
        check(True, "invalid BLEU order raises ValueError")


def pipeline():
    with tempfile.TemporaryDirectory() as tmp:
        run = pathlib.Path(tmp) / "run"
        cfg = cg.Config(str(ROOT / "configs" / "smoke.toml"))
        check(json.loads(cfg.get("rounds")) == 2, "config loads with its keys")
        entropy = cg.synth(cfg, str(run))
        check(len(entropy) == 2, "synth reports one entropy per category")
        log = [json.loads(line) for line in cg.pretrain(cfg, str(run))]
        check(log[0]["epoch"] == 0 and log[-1]["nll_oracle"] < log[0]["nll_oracle"], "pretraining lowers NLL_oracle")
        check(cg.train(cfg, str(run)) == 2, "training completes both rounds")
        metrics = cg.evaluate(cfg, str(run))
        check({"nll_oracle", "nll_div", "nll_gen"} <= set(metrics), "evaluation reports the NLL metrics")
        vocab = cg.Vocabulary.load(str(run / "vocab.txt"))
        lines = cg.sample(str(run / "train.ckpt"), vocab, 3, category=0)
        check(len(lines) == 3 and all(l.startswith("cat=0\t") for l in lines), "sampling from the checkpoint")
    try:
        cg.Config(overrides=["k=0"])
    except ValueError:
        check(True, "invalid configuration raises ValueError")


if __name__ == "__main__":
    models()
    losses()
    pipeline()
    print("python smoke test passed")
