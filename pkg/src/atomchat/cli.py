"""Command-line entry point for reproducible corpus, training and evaluation runs.

Commands: synth, train, baseline, generate, eval, inspect. Every command
emits a run manifest first (resolved config, seed, input checksums, code
version); identical manifests produce byte-identical primary outputs.

Exit codes: 0 success, 2 usage error, 3 numeric failure, 4 i/o or format failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys

from . import __version__
from .baseline import baseline_generate, load_baseline_checkpoint, run_baseline_training
from .composer import molecule_to_str
from .corpus import (
    SyntheticSpec,
    build_vocab,
    encode_pairs,
    flatten,
    generate_synthetic,
    load_corpus,
    save_corpus,
)
from .errors import FormatError, NumericError, ParseError, UsageError
from .generation import generate_two_stage
from .metrics import bleu4, coverage_at_l, diversity_score, keyword_table, normalize_response
from .training import load_arm_checkpoint, load_config, make_config, run_training

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _checksum(paths):
    digest = hashlib.sha256()
    for p in sorted(paths):
        with open(p, "rb") as f:
            digest.update(f.read())
    return digest.hexdigest()


def _require_file(path, what):
    if not os.path.isfile(path):
        raise UsageError(f"missing {what}: {path}")
    return path


def run_manifest(command, config, seed, corpus_checksum, checkpoint=None):
    return {
        "manifest": {
            "command": command,
            "config": config,
            "seed": seed,
            "corpus_checksum": corpus_checksum,
            "checkpoint": checkpoint,
            "version": __version__,
        }
    }


def _write_manifest_file(out_dir, manifest):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as f:
        f.write(json.dumps(manifest, sort_keys=True) + "\n")


def _resolve_config(args):
    config = load_config(_require_file(args.config, "config file")) if args.config else make_config({})
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "corpus", None):
        overrides["corpus_dir"] = args.corpus
    if getattr(args, "out", None):
        overrides["checkpoint_dir"] = args.out
    if overrides:
        config = dataclasses.replace(config, **overrides)
    return config


def _load_split(corpus_dir, name):
    return load_corpus(_require_file(os.path.join(corpus_dir, name), f"corpus split {name}"))


def _corpus_files(corpus_dir):
    return [os.path.join(corpus_dir, n) for n in ("train.jsonl", "valid.jsonl", "test.jsonl")]


# --------------------------------------------------------------------------
# Commands


def cmd_synth(args):
    spec = SyntheticSpec(
        train_posts=args.train_posts,
        val_posts=args.val_posts,
        test_posts=args.test_posts,
        responses_min=args.responses,
        responses_max=args.responses,
        shared_fragment_rate=args.shared_rate,
        vocab_size=args.vocab_size,
        seed=args.seed if args.seed is not None else 0,
    )
    manifest = run_manifest("synth", dataclasses.asdict(spec), spec.seed, None)
    _write_manifest_file(args.out, manifest)
    train, val, test = generate_synthetic(spec)
    for name, pairs in (("train.jsonl", train), ("valid.jsonl", val), ("test.jsonl", test)):
        save_corpus(pairs, os.path.join(args.out, name))
    print(json.dumps(manifest, sort_keys=True))
    print(f"wrote {len(train)}/{len(val)}/{len(test)} posts to {args.out}")
    return EXIT_OK


def _prepare_training(args):
    config = _resolve_config(args)
    train_pairs = _load_split(config.corpus_dir, "train.jsonl")
    val_path = os.path.join(config.corpus_dir, "valid.jsonl")
    val_pairs = load_corpus(val_path) if os.path.isfile(val_path) else []
    vocab = build_vocab(train_pairs, config.vocab_size)
    train_instances = flatten(encode_pairs(train_pairs, vocab))
    val_instances = flatten(encode_pairs(val_pairs, vocab)) if val_pairs else []
    return config, vocab, train_instances, val_instances


def cmd_train(args):
    config, vocab, train_instances, val_instances = _prepare_training(args)
    out_dir = config.checkpoint_dir
    os.makedirs(out_dir, exist_ok=True)
    manifest = run_manifest(
        "train", config.to_dict(), config.seed, _checksum(_corpus_files(config.corpus_dir)[:2])
    )
    _write_manifest_file(out_dir, manifest)
    print(json.dumps(manifest, sort_keys=True))
    vocab.save(os.path.join(out_dir, "vocab.txt"))
    result = run_training(
        config,
        train_instances,
        val_instances,
        vocab,
        checkpoint_path=os.path.join(out_dir, "arm.ckpt"),
        log_path=os.path.join(out_dir, "train_log.jsonl"),
    )
    for record in result.log.records:
        print(
            f"epoch {record.epoch}: reward {record.teacher_mean_reward:.4f} "
            f"loss {record.student_loss:.4f} val_nll {record.val_nll:.4f} "
            f"({record.wall_time_s:.1f}s)",
            file=sys.stderr,
        )
    print(f"stopped: {result.stop_reason}, best epoch {result.best_epoch}")
    return EXIT_OK


def cmd_baseline(args):
    config, vocab, train_instances, val_instances = _prepare_training(args)
    out_dir = config.checkpoint_dir
    os.makedirs(out_dir, exist_ok=True)
    manifest = run_manifest(
        "baseline", config.to_dict(), config.seed, _checksum(_corpus_files(config.corpus_dir)[:2])
    )
    _write_manifest_file(out_dir, manifest)
    print(json.dumps(manifest, sort_keys=True))
    result = run_baseline_training(
        config,
        train_instances,
        val_instances,
        vocab,
        checkpoint_path=os.path.join(out_dir, "baseline.ckpt"),
        log_path=os.path.join(out_dir, "baseline_log.jsonl"),
    )
    print(f"stopped: {result.stop_reason}, best epoch {result.best_epoch}")
    return EXIT_OK


def _load_posts(path, vocab):
    posts = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            tokens = tuple(line.split())
            if tokens:
                posts.append(tokens)
    if not posts:
        raise UsageError(f"no posts in {path}")
    return [(p, vocab.encode(p)) for p in posts]


def cmd_generate(args):
    config, vocab, _, student, _ = load_arm_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    l = args.l if args.l is not None else config.l
    mol_width = args.beam_molecules or config.beam_molecules
    tok_width = args.beam_tokens or config.beam_tokens
    posts = _load_posts(_require_file(args.posts, "post file"), vocab)
    manifest = run_manifest(
        "generate",
        {"l": l, "beam_molecules": mol_width, "beam_tokens": tok_width},
        config.seed,
        _checksum([args.posts]),
        checkpoint=args.checkpoint,
    )
    lines = [json.dumps(manifest, sort_keys=True)]
    for tokens, ids in posts:
        results = generate_two_stage(
            student, ids, l, config.k_max, mol_width, tok_width, config.max_response_len
        )
        if len(results) < l:
            lines.append(
                json.dumps(
                    {"warning": "fewer molecules than requested", "post": " ".join(tokens),
                     "requested": l, "returned": len(results)},
                    sort_keys=True,
                )
            )
        for gen in results:
            response_ids, response_logp = gen.responses[0]
            lines.append(
                json.dumps(
                    {
                        "post": " ".join(tokens),
                        "molecule": molecule_to_str(gen.molecule),
                        "molecule_logp": gen.molecule_logp,
                        "response": " ".join(vocab.decode(response_ids)),
                        "response_logp": response_logp,
                    },
                    sort_keys=True,
                )
            )
    _emit(lines, args.out)
    return EXIT_OK


def _emit(lines, out_path):
    text = "\n".join(lines) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _eval_records(model_name, post, generated_ids, references):
    refs = [normalize_response(r) for r in references]
    cands = [normalize_response(g) for g in generated_ids]
    per_response_bleu = [
        bleu4(c, refs) if c else 0.0 for c in cands
    ]
    distinct = len(set(cands))
    return {
        "model": model_name,
        "post": " ".join(str(t) for t in post),
        "bleu4": sum(per_response_bleu) / len(per_response_bleu),
        "diversity": diversity_score(generated_ids),
        "coverage": coverage_at_l(generated_ids, references),
        "n_distinct": distinct,
    }


def _aggregate(records):
    keys = ("bleu4", "diversity", "coverage", "n_distinct")
    agg = {"aggregate": True, "model": records[0]["model"], "n_posts": len(records)}
    for key in keys:
        agg[key] = sum(r[key] for r in records) / len(records)
    return agg


def cmd_eval(args):
    config, vocab, _, student, _ = load_arm_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    pairs = load_corpus(_require_file(args.corpus, "test corpus"))
    encoded = encode_pairs(pairs, vocab)
    l = args.l if args.l is not None else config.l
    manifest = run_manifest(
        "eval", {"l": l}, config.seed, _checksum([args.corpus]), checkpoint=args.checkpoint
    )
    lines = [json.dumps(manifest, sort_keys=True)]
    arm_records = []
    for pair, enc in zip(pairs, encoded):
        results = generate_two_stage(
            student, enc.post, l, config.k_max, config.beam_molecules,
            config.beam_tokens, config.max_response_len,
        )
        generated = [gen.responses[0][0] for gen in results]
        arm_records.append(_eval_records("arm", pair.post, generated, enc.responses))
    for record in arm_records:
        lines.append(json.dumps(record, sort_keys=True))
    lines.append(json.dumps(_aggregate(arm_records), sort_keys=True))
    if args.baseline:
        _, bvocab, bstate, _ = load_baseline_checkpoint(_require_file(args.baseline, "baseline checkpoint"))
        bencoded = encode_pairs(pairs, bvocab)
        base_records = []
        for pair, enc in zip(pairs, bencoded):
            outs = baseline_generate(bstate, enc.post, l, config.beam_tokens, config.max_response_len)
            base_records.append(
                _eval_records("encdec", pair.post, [ids for ids, _ in outs], enc.responses)
            )
        for record in base_records:
            lines.append(json.dumps(record, sort_keys=True))
        lines.append(json.dumps(_aggregate(base_records), sort_keys=True))
    _emit(lines, args.out)
    return EXIT_OK


def cmd_inspect(args):
    config, vocab, _, student, _ = load_arm_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    pairs = load_corpus(_require_file(args.corpus, "corpus"))
    encoded = encode_pairs(pairs, vocab)
    manifest = run_manifest(
        "inspect",
        {"molecules_per_post": args.molecules_per_post,
         "responses_per_molecule": args.responses_per_molecule},
        config.seed,
        _checksum([args.corpus]),
        checkpoint=args.checkpoint,
    )
    records = []
    for enc in encoded:
        results = generate_two_stage(
            student,
            enc.post,
            args.molecules_per_post,
            config.k_max,
            mol_width=max(config.beam_molecules, args.molecules_per_post),
            tok_width=max(config.beam_tokens, args.responses_per_molecule),
            max_len=config.max_response_len,
            responses_per_molecule=args.responses_per_molecule,
        )
        for gen in results:
            for ids, _ in gen.responses:
                records.append((gen.molecule, vocab.decode(ids)))
    report = keyword_table(records, config.atom_count, threshold=args.threshold,
                           stopwords=frozenset(args.stopword))
    usage = {atom: 0 for atom in range(1, config.atom_count + 1)}
    total_len = 0
    for molecule, _ in records:
        total_len += len(molecule)
        for atom in molecule:
            usage[atom] += 1
    payload = {
        "keywords": {str(a): [[w, p] for w, p in rows] for a, rows in sorted(report.keywords.items())},
        "atoms_without_records": report.atoms_without_records,
        "usage": {str(a): usage[a] for a in sorted(usage)},
        "mean_molecule_length": (total_len / len(records)) if records else 0.0,
        "n_records": len(records),
    }
    lines = [json.dumps(manifest, sort_keys=True), json.dumps(payload, sort_keys=True)]
    _emit(lines, args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser and dispatch


def build_parser():
    parser = argparse.ArgumentParser(
        prog="atomchat",
        description="Train and run the mechanism-composing dialogue responder.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic one-to-many corpus")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--train-posts", type=int, default=50)
    p.add_argument("--val-posts", type=int, default=8)
    p.add_argument("--test-posts", type=int, default=8)
    p.add_argument("--responses", type=int, default=4, help="distinct responses per post")
    p.add_argument("--vocab-size", type=int, default=64)
    p.add_argument("--shared-rate", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    for name, func in (("train", cmd_train), ("baseline", cmd_baseline)):
        p = sub.add_parser(name, help=f"run {name} training")
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--corpus", default=None, help="corpus directory override")
        p.add_argument("--out", default=None, help="checkpoint directory override")
        p.set_defaults(func=func)

    p = sub.add_parser("generate", help="two-stage generation for a post file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--posts", required=True, help="one whitespace-tokenized post per line")
    p.add_argument("-L", dest="l", type=int, default=None, help="molecules per post")
    p.add_argument("--beam-molecules", type=int, default=None)
    p.add_argument("--beam-tokens", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="bleu/diversity/coverage report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True, help="test corpus file (jsonl)")
    p.add_argument("-L", dest="l", type=int, default=None)
    p.add_argument("--baseline", default=None, help="baseline checkpoint to compare")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="atom keyword tables and usage stats")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--molecules-per-post", type=int, default=25)
    p.add_argument("--responses-per-molecule", type=int, default=3)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--stopword", action="append", default=[])
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if e.code is not None else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, ParseError, OSError) as e:
        print(f"i/o failure: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
