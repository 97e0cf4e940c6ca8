"""Small end-to-end run in-process: train an extraction ensemble, train a
copy-attention generator with reconstruction heads, decode with beam search
and print the metrics table for the template system and the generator.

Takes about two minutes on one CPU core.  Forty games and six epochs are far
too little for the generator to beat the template; the point is the plumbing.

Run with ``python demos/train_and_generate.py``.
"""
import time

from d2doc.extractor import ExtractorConfig, accuracy, train_extractor
from d2doc.generator import GenConfig, ReconConfig, beam_search, perplexity, train_generator
from d2doc.metrics import TABLE_HEADER, evaluate_system
from d2doc.spanner import build_ie_examples
from d2doc.synth import NoiseConfig, synth_games
from d2doc.templater import render_summary

data = synth_games(40, seed=7, noise=NoiseConfig.default())
print(f"{len(data.train)} train / {len(data.valid)} valid / {len(data.test)} test games")

t0 = time.time()
ie_train = [ex for p in data.train for ex in build_ie_examples(p)]
ie_test = [ex for p in data.test for ex in build_ie_examples(p)]
ens, _, _ = train_extractor(ie_train, ExtractorConfig(epochs=8, n_conv_models=1, n_blstm_models=1, seed=1).scaled(10))
print(f"extractor: {len(ens.members)} members, test accuracy {accuracy(ens, ie_test):.3f} ({time.time() - t0:.0f}s)")

cfg = GenConfig(dim=64, copy_mode="conditional", epochs=6, batch_size=1, lr=1.0, dropout=0.2,
                recon=ReconConfig(enabled=True, filters=32, head_dim=32))
t0 = time.time()


def show(model, stats):
    print(f"  epoch {stats.epoch}: train ppl {stats.ppl:.2f}  recon {stats.recon:.1f}")


model, _ = train_generator(data.train, cfg, valid_pairs=data.valid, callback=show)
print(f"generator trained in {time.time() - t0:.0f}s")

gen_docs = [beam_search(p.db, model, B=3, max_len=120) for p in data.test]
print("\nfirst generated summary:\n  " + " ".join(gen_docs[0].tokens))

templ = [render_summary(p.db).document for p in data.test]
print("\n" + TABLE_HEADER)
print(evaluate_system(templ, data.test, ens).row("template"))
print(evaluate_system(gen_docs, data.test, ens, perplexity=perplexity(model, data.test)).row("copy+recon"))
