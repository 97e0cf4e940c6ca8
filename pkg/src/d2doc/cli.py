"""``d2doc`` command line: synthetic data, IE training, extraction, generation and evaluation.

Every command writes a ``*.manifest.json`` next to its output recording the
command line, resolved configuration, seed and timing.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__

log = logging.getLogger("d2doc")

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "BLIS_NUM_THREADS")


class CLIError(Exception):
    """A user-facing failure; reported without a traceback, exit status 1."""


# -- helpers ---------------------------------------------------------------
def _set_threads(n):
    # must run before numpy loads its BLAS, which is why heavy imports are deferred
    if n:
        for var in THREAD_VARS:
            os.environ[var] = str(n)


def _check_out(path, force):
    path = Path(path)
    if path.exists() and not force:
        raise CLIError(f"{path} exists; pass --force to overwrite")
    if path.suffix:
        path.parent.mkdir(parents=True, exist_ok=True)
    return path


def manifest_path(out):
    out = Path(out)
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


def write_manifest(args, out, config, inputs, started):
    from .records import write_atomic

    doc = {
        "command": args.command,
        "argv": sys.argv[1:],
        "config": config,
        "seed": args.seed,
        "inputs": {k: str(v) for k, v in inputs.items() if v is not None},
        "output": str(out),
        "version": __version__,
        "wall_clock_seconds": round(time.time() - started, 3),
    }
    write_atomic(manifest_path(out), json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_config(args, defaults):
    """Resolve options: built-in defaults < ``--config`` file < explicit flags."""
    cfg = dict(defaults)
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            extra = json.load(fh)
        unknown = set(extra) - set(defaults)
        if unknown:
            raise CLIError(f"{args.config}: unknown keys {sorted(unknown)}")
        cfg.update(extra)
    for k in defaults:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _split(args):
    from .records import load_dataset

    data = load_dataset(args.data)
    pairs = getattr(data, args.split)
    if not pairs:
        raise CLIError(f"{args.data}: split {args.split!r} is empty")
    return pairs


def _need(path, what, hint):
    if path is None or not Path(path).exists():
        raise CLIError(f"{what} not found: {path}. {hint}")


# -- commands --------------------------------------------------------------
def cmd_synth(args):
    from .records import save_dataset
    from .synth import NoiseConfig, synth_games

    if args.games < 1:
        raise CLIError("--games must be >= 1")
    started = time.time()
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise CLIError(f"{out} is not empty; pass --force to overwrite")
    noise = NoiseConfig.default() if args.noise == "default" else NoiseConfig.none()
    split = synth_games(args.games, args.seed, noise)
    save_dataset(split, out)
    write_manifest(args, out, {"games": args.games, "noise": args.noise}, {}, started)
    print(f"wrote {len(split.train)}/{len(split.valid)}/{len(split.test)} games to {out}")


def cmd_make_ie(args):
    from .extractor import ie_vocab
    from .records import load_dataset, write_atomic
    from .spanner import build_ie_examples, write_ie_file

    started = time.time()
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise CLIError(f"{out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    data = load_dataset(args.data)
    per_split = {name: [ex for p in getattr(data, name) for ex in build_ie_examples(p)]
                 for name in ("train", "valid", "test")}
    if not per_split["train"]:
        raise CLIError(f"{args.data}: no training IE examples")
    vocab = ie_vocab(per_split["train"])
    write_atomic(out / "vocab.json", json.dumps(vocab.to_list(), ensure_ascii=False) + "\n")
    for name, exs in per_split.items():
        write_ie_file(out / f"ie_{name}.jsonl", exs, vocab)
        print(f"{name}: {len(exs)} examples")
    write_manifest(args, out, {}, {"data": args.data}, started)


def _read_ie(directory, split):
    from .records import Vocab
    from .spanner import read_ie_file

    directory = Path(directory)
    _need(directory / "vocab.json", "IE vocabulary", "Run `d2doc make-ie` first.")
    with open(directory / "vocab.json", encoding="utf-8") as fh:
        vocab = Vocab.from_list(json.load(fh))
    return read_ie_file(directory / f"ie_{split}.jsonl", vocab), vocab


IE_DEFAULTS = {"epochs": 10, "lr": 0.7, "batch_size": 32, "scale": 1.0, "patience": None,
               "n_conv": 3, "n_blstm": 3, "dropout": 0.0}


def cmd_train_ie(args):
    from .extractor import ExtractorConfig, accuracy, train_extractor

    started = time.time()
    out = _check_out(args.out, args.force)
    opts = _load_config(args, IE_DEFAULTS)
    examples, vocab = _read_ie(args.ie, "train")
    cfg = ExtractorConfig(epochs=opts["epochs"], lr=opts["lr"], batch_size=opts["batch_size"],
                          patience=opts["patience"], n_conv_models=opts["n_conv"],
                          n_blstm_models=opts["n_blstm"], dropout=opts["dropout"], seed=args.seed)
    if opts["scale"] != 1.0:
        cfg = cfg.scaled(opts["scale"])
    ens, history, held = train_extractor(examples, cfg, vocab)
    ens.save(out)
    acc = accuracy(ens, held) if held else float("nan")
    print(f"ensemble held-out accuracy {acc:.4f} ({len(held)} examples)")
    from .records import write_atomic

    write_atomic(out.with_name(out.name + ".history.json"), json.dumps(history, indent=1) + "\n")
    write_manifest(args, out, opts, {"ie": args.ie}, started)


def cmd_extract(args):
    from .extractor import Ensemble, dumps_extractions, extract_sequence
    from .records import Document, write_atomic
    from .templater import loads_generations

    started = time.time()
    out = _check_out(args.out, args.force)
    _need(args.ensemble, "ensemble", "Train one with `d2doc train-ie`.")
    ens = Ensemble.load(args.ensemble)
    pairs = _split(args)
    docs = _documents(args, pairs, loads_generations, Document)
    seqs = [extract_sequence(d, p.db, ens) for d, p in zip(docs, pairs)]
    write_atomic(out, dumps_extractions(seqs))
    write_manifest(args, out, {}, {"data": args.data, "ensemble": args.ensemble, "gen": args.gen}, started)
    print(f"extracted {sum(len(s) for s in seqs)} records from {len(seqs)} documents")


def _documents(args, pairs, loads_generations, Document):
    if not getattr(args, "gen", None):
        return [p.summary for p in pairs]
    with open(args.gen, encoding="utf-8") as fh:
        gens = dict(loads_generations(fh.read()))
    missing = [p.game_id for p in pairs if p.game_id not in gens]
    if missing:
        raise CLIError(f"{args.gen}: no generation for games {missing[:5]}")
    return [Document.from_tokens(gens[p.game_id]) for p in pairs]


def cmd_template(args):
    from .records import write_atomic
    from .templater import dumps_generations, render_summary

    started = time.time()
    out = _check_out(args.out, args.force)
    pairs = _split(args)
    outs = [render_summary(p.db) for p in pairs]
    write_atomic(out, dumps_generations([p.game_id for p in pairs], [o.tokens for o in outs],
                                        [o.realized for o in outs]))
    write_manifest(args, out, {}, {"data": args.data}, started)
    print(f"wrote {len(outs)} template summaries to {out}")


GEN_DEFAULTS = {"dim": 64, "layers": 2, "copy_mode": "conditional", "epochs": 10, "batch_size": 16,
                "lr": 1.0, "dropout": 0.5, "bptt_block": 100, "recon": False, "recon_block": 100,
                "K": 3, "tvd_weight": 1.0, "tvd_sign": "penalize", "recon_filters": 200,
                "max_entities": 30, "min_count": 1}


def cmd_train_gen(args):
    from .generator import GenConfig, ReconConfig, train_generator
    from .records import load_dataset, write_atomic

    started = time.time()
    out = _check_out(args.out, args.force)
    o = _load_config(args, GEN_DEFAULTS)
    data = load_dataset(args.data)
    if not data.train:
        raise CLIError(f"{args.data}: empty training split")
    cfg = GenConfig(dim=o["dim"], layers=o["layers"], copy_mode=o["copy_mode"], epochs=o["epochs"],
                    batch_size=o["batch_size"], lr=o["lr"], dropout=o["dropout"], bptt_block=o["bptt_block"],
                    max_entities=o["max_entities"], min_count=o["min_count"], seed=args.seed,
                    recon=ReconConfig(enabled=o["recon"], block=o["recon_block"], K=o["K"],
                                      tvd_weight=o["tvd_weight"], tvd_sign=o["tvd_sign"],
                                      filters=o["recon_filters"]))
    model, history = train_generator(data.train, cfg, data.valid or None)
    model.save(out)
    hist = [{"epoch": h.epoch, "train_ppl": h.ppl, "valid_ppl": h.valid_ppl, "recon": h.recon,
             "tvd": h.tvd, "lr": h.lr} for h in history]
    write_atomic(out.with_name(out.name + ".history.json"), json.dumps(hist, indent=1) + "\n")
    write_manifest(args, out, cfg.to_dict(), {"data": args.data}, started)
    last = history[-1]
    print(f"trained {len(history)} epochs; train ppl {last.ppl:.3f}"
          + (f", valid ppl {last.valid_ppl:.3f}" if last.valid_ppl is not None else ""))


def cmd_generate(args):
    from .generator import GenModel, beam_search
    from .records import write_atomic
    from .templater import dumps_generations

    started = time.time()
    out = _check_out(args.out, args.force)
    _need(args.model, "generator model", "Train one with `d2doc train-gen`.")
    model = GenModel.load(args.model)
    pairs = _split(args)
    docs = [beam_search(p.db, model, args.beam, args.max_len) for p in pairs]
    write_atomic(out, dumps_generations([p.game_id for p in pairs], [d.tokens for d in docs]))
    write_manifest(args, out, {"beam": args.beam, "max_len": args.max_len},
                   {"data": args.data, "model": args.model}, started)
    print(f"generated {len(docs)} summaries (beam {args.beam})")


def cmd_eval(args):
    from .extractor import Ensemble
    from .metrics import TABLE_HEADER, evaluate_system
    from .records import Document, write_atomic
    from .templater import loads_generations

    started = time.time()
    out = _check_out(args.out, args.force)
    if args.ensemble is None or not Path(args.ensemble).exists():
        raise CLIError(f"ensemble not found: {args.ensemble}. Train one with `d2doc train-ie` "
                       "and pass it with --ensemble.")
    ens = Ensemble.load(args.ensemble)
    pairs = _split(args)
    docs = _documents(args, pairs, loads_generations, Document)
    ppl = None
    if args.model:
        from .generator import GenModel, perplexity

        ppl = perplexity(GenModel.load(args.model), pairs)
    report = evaluate_system(docs, pairs, ens, perplexity=ppl)
    write_atomic(out, report.to_json() + "\n")
    write_manifest(args, out, {}, {"data": args.data, "ensemble": args.ensemble, "gen": args.gen,
                                   "model": args.model}, started)
    print(TABLE_HEADER)
    print(report.row(args.name or ("gold" if not args.gen else Path(args.gen).stem)))


def cmd_grad_check(args):
    from .gradsuite import CHECKS, TOLERANCE, run_all

    names = args.only or list(CHECKS)
    bad = [n for n in names if n not in CHECKS]
    if bad:
        raise CLIError(f"unknown checks {bad}; choose from {sorted(CHECKS)}")
    failed = False
    for name, err, secs in run_all(args.seed, names):
        ok = err < TOLERANCE
        failed |= not ok
        print(f"{name:<16} max rel err {err:.3e}  {'ok' if ok else 'FAIL'}  ({secs:.1f}s)")
    if failed:
        raise CLIError("gradient check failed")


# -- parser ----------------------------------------------------------------
def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=1)
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--threads", type=int, default=None,
                        help="BLAS threads (falls back to $D2D_THREADS)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="d2doc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"d2doc {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def data_args(sp, split="test"):
        sp.add_argument("--data", required=True, help="dataset directory or split file")
        sp.add_argument("--split", default=split, choices=("train", "valid", "test"))

    s = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    s.add_argument("--games", type=int, required=True)
    s.add_argument("--noise", choices=("none", "default"), default="none")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("make-ie", parents=[common], help="build distantly supervised IE examples")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_make_ie)

    s = sub.add_parser("train-ie", parents=[common], help="train the extraction ensemble")
    s.add_argument("--ie", required=True, help="directory written by make-ie")
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--scale", type=float, help="divide every layer width by this factor")
    s.add_argument("--patience", type=int)
    s.add_argument("--n-conv", type=int)
    s.add_argument("--n-blstm", type=int)
    s.add_argument("--dropout", type=float)
    s.set_defaults(func=cmd_train_ie)

    s = sub.add_parser("extract", parents=[common], help="extract record sequences from documents")
    data_args(s)
    s.add_argument("--ensemble", required=True)
    s.add_argument("--gen", help="generation file; gold summaries when omitted")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("template", parents=[common], help="write template summaries")
    data_args(s)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_template)

    s = sub.add_parser("train-gen", parents=[common], help="train a neural generator")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--dim", type=int)
    s.add_argument("--layers", type=int)
    s.add_argument("--copy-mode", choices=("none", "joint", "conditional"))
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--dropout", type=float)
    s.add_argument("--bptt-block", type=int)
    s.add_argument("--recon", action="store_const", const=True)
    s.add_argument("--recon-block", type=int)
    s.add_argument("--K", type=int)
    s.add_argument("--tvd-weight", type=float)
    s.add_argument("--tvd-sign", choices=("penalize", "encourage"))
    s.add_argument("--recon-filters", type=int)
    s.add_argument("--max-entities", type=int)
    s.add_argument("--min-count", type=int)
    s.set_defaults(func=cmd_train_gen)

    s = sub.add_parser("generate", parents=[common], help="decode summaries with a trained generator")
    data_args(s)
    s.add_argument("--model", required=True)
    s.add_argument("--beam", type=int, default=1)
    s.add_argument("--max-len", type=int, default=400)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("eval", parents=[common], help="score documents with RG/CS/CO/BLEU")
    data_args(s)
    s.add_argument("--ensemble")
    s.add_argument("--gen", help="generation file; gold summaries are scored when omitted")
    s.add_argument("--model", help="generator to report perplexity for")
    s.add_argument("--name", help="row label")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("grad-check", parents=[common], help="finite-difference gradient checks")
    s.add_argument("--only", nargs="*")
    s.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = args.threads
    if threads is None and os.environ.get("D2D_THREADS"):
        try:
            threads = int(os.environ["D2D_THREADS"])
        except ValueError:
            parser.error(f"D2D_THREADS must be an integer, got {os.environ['D2D_THREADS']!r}")
    if threads is not None and threads < 1:
        parser.error("--threads must be >= 1")
    _set_threads(threads)
    if args.command == "synth" and args.games < 1:
        parser.error("--games must be >= 1")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except CLIError as e:
        print(f"d2doc {args.command}: error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        print(f"d2doc {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
