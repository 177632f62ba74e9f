"""Dizi notation toolkit: corpus stats, classification, technique tagging and style transfer.

Every subcommand accepts ``--seed``.  Reports go to stdout as a table; pass
``--json PATH`` to also write the machine-readable form.  ``DIZIKIT_CORPUS``
and ``DIZIKIT_MODELS`` supply default corpus and model locations.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .classify import ClassifierConfig, ClassifierModel, cross_validate, fit_pipeline
from .corpus import compare_with_reported, corpus_stats, load_corpus
from .features import EmbeddingParams
from .musicxml import export_musicxml
from .notation import School, ScoreError, parse_score
from .represent import segment
from .synth import synth_corpus, write_corpus
from .tagger import CrfConfig, CrfModel, RuleSet, cross_validate_tagger, default_rules, train_crf
from .transfer import TransferConfig, TransferError, run_style_transfer


def _corpus_default():
    return os.environ.get("DIZIKIT_CORPUS")


def _model_default(name: str):
    base = os.environ.get("DIZIKIT_MODELS")
    return str(Path(base) / name) if base else None


def _write_json(path, payload) -> None:
    if path:
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_score(path):
    try:
        return parse_score(Path(path).read_text(encoding="utf-8"))
    except ScoreError as exc:
        raise ScoreError(f"{path}: {exc}") from None


def _load_pieces(args, school: School | None = None):
    corpus = load_corpus(args.corpus)
    for path, msg in corpus.errors:
        print(f"warning: skipping {path}: {msg}", file=sys.stderr)
    pieces = []
    for score in corpus.scores:
        if school is None or score.school is school:
            pieces += segment(score, args.window, include_rests=not args.no_rests)
    if not pieces:
        raise ValueError(f"no {args.window}-measure pieces found in {args.corpus}")
    return pieces


def _classifier_config(args) -> ClassifierConfig:
    emb = EmbeddingParams(dim=args.dim, epochs=args.epochs, seed=args.seed)
    return ClassifierConfig(scheme=args.features, reg=args.reg, seed=args.seed, embedding=emb)


# --- commands ----------------------------------------------------------------


def cmd_stats(args) -> int:
    corpus = load_corpus(args.corpus)
    stats = corpus_stats(corpus)
    sys.stdout.write(stats.to_table())
    payload = stats.to_dict()
    if args.check_published:
        warnings = compare_with_reported(stats)
        for w in warnings:
            print(w)
        payload["check_published"] = warnings
    _write_json(args.json, payload)
    return 0


def cmd_tokenize(args) -> int:
    path = Path(args.input)
    files = sorted(path.rglob("*.jp")) if path.is_dir() else [path]
    for f in files:
        score = _read_score(f)
        for piece in segment(score, args.window, include_rests=not args.no_rests):
            print(f"{piece.label.value}\t" + " ".join(piece.tokens))
    return 0


def cmd_export(args) -> int:
    score = _read_score(args.input)
    out = Path(args.out) if args.out else Path(args.input).with_suffix(".musicxml")
    out.write_text(export_musicxml(score), encoding="utf-8")
    print(f"wrote {out}")
    return 0


def cmd_synth(args) -> int:
    scores = synth_corpus(args.pieces, args.seed, args.measures)
    paths = write_corpus(scores, args.out)
    counts = {s.value: sum(1 for x in scores if x.school is s) for s in (School.NORTH, School.SOUTH)}
    print(f"wrote {len(paths)} pieces to {args.out} ({', '.join(f'{k}={v}' for k, v in counts.items())})")
    return 0


def cmd_train(args) -> int:
    pieces = _load_pieces(args)
    model = fit_pipeline(pieces, _classifier_config(args))
    model.save(args.out)
    print(f"trained {args.features} classifier on {len(pieces)} pieces "
          f"({', '.join(c.value for c in model.classes)}); wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    pieces = _load_pieces(args)
    report = cross_validate(pieces, args.folds, _classifier_config(args))
    sys.stdout.write(report.to_table())
    _write_json(args.json, report.to_dict())
    return 0


def cmd_tag_train(args) -> int:
    school = School.parse(args.school)
    pieces = _load_pieces(args, school)
    model = train_crf(pieces, CrfConfig(reg=args.reg, max_iter=args.max_iter, seed=args.seed))
    model.save(args.out)
    print(f"trained {school.value} tagger on {len(pieces)} pieces "
          f"({len(model.features)} features); wrote {args.out}")
    return 0


def cmd_tag_eval(args) -> int:
    school = School.parse(args.school)
    pieces = _load_pieces(args, school)
    rules = _rules(args)
    report = cross_validate_tagger(pieces, args.folds, CrfConfig(reg=args.reg, max_iter=args.max_iter,
                                                                  seed=args.seed), rules)
    oov = "undefined" if report.oov_accuracy is None else f"{report.oov_accuracy:.2f}"
    print(f"school: {school.value}   variant: {report.variant}   folds: {args.folds}   seed: {args.seed}")
    print(f"{'fold':>4} {'accuracy':>9} {'oov':>9}")
    for k, (acc, o) in enumerate(report.folds):
        print(f"{k:>4} {acc:9.2f} {'undefined' if o is None else f'{o:9.2f}':>9}")
    print(f"{'mean':>4} {report.accuracy:9.2f} {oov:>9}")
    print(f"disagreements with gold tags: {report.disagreements}")
    payload = report.to_dict()
    payload["school"] = school.value
    _write_json(args.json, payload)
    return 0


def _rules(args):
    if getattr(args, "rules", None):
        return RuleSet.load(args.rules)
    if getattr(args, "default_rules", False):
        return default_rules()
    return None


def cmd_transfer(args) -> int:
    source_path = Path(args.input)
    score = _read_score(source_path)
    source = School.parse(args.source) if args.source else score.school
    target = School.parse(args.target)
    classifier = ClassifierModel.load(args.classifier)
    tagger = CrfModel.load(args.tagger)
    checkpoints = tuple(int(c) for c in args.checkpoints.split(",")) if args.checkpoints else (0,)
    config = TransferConfig(iterations=args.iterations, checkpoints=checkpoints, window=args.window,
                            include_rests=not args.no_rests, force=args.force, seed=args.seed)
    result = run_style_transfer(score, source, target, classifier, tagger, _rules(args), config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = source_path.stem
    for c, (jp, xml) in sorted(result.exports.items()):
        (out / f"{stem}.it{c}.jp").write_text(jp, encoding="utf-8")
        (out / f"{stem}.it{c}.musicxml").write_text(xml, encoding="utf-8")
    (out / f"{stem}.trace.tsv").write_text(result.trace_text(), encoding="utf-8")
    summary = result.summary_text(classifier.classes)
    (out / f"{stem}.summary.tsv").write_text(summary, encoding="utf-8")
    accepted = sum(e.accepted for e in result.trace)
    print(f"{source.value} -> {target.value}: {len(result.trace)} proposals, {accepted} accepted")
    sys.stdout.write(summary)
    _write_json(args.json, {
        "source": source.value,
        "target": target.value,
        "seed": args.seed,
        "proposals": len(result.trace),
        "accepted": accepted,
        "checkpoints": {str(c): {"probabilities": result.probabilities[c],
                                 "techniques": dict(sorted(result.technique_counts[c].items()))}
                        for c in sorted(result.checkpoints)},
    })
    return 0


# --- parser --------------------------------------------------------------------


def _add_common(p, corpus=False, pieces=False):
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--json", metavar="PATH", help="also write the report as JSON")
    if corpus:
        default = _corpus_default()
        p.add_argument("--corpus", default=default, required=default is None,
                       help="directory of .jp files (default $DIZIKIT_CORPUS)")
    if pieces:
        p.add_argument("--window", type=int, default=4, help="measures per piece (default 4)")
        p.add_argument("--no-rests", action="store_true", help="leave rests out of token sequences")


def _add_classifier_opts(p):
    p.add_argument("--features", choices=("bow", "tfidf", "cbow", "skipgram"), default="tfidf")
    p.add_argument("--reg", type=float, default=1e-2, help="L2 strength (default 0.01)")
    p.add_argument("--dim", type=int, default=32, help="embedding dimension (cbow/skipgram)")
    p.add_argument("--epochs", type=int, default=30, help="embedding epochs (cbow/skipgram)")


def _add_tagger_opts(p):
    p.add_argument("--school", required=True, help="North or South")
    p.add_argument("--reg", type=float, default=0.1, help="L2 strength (default 0.1)")
    p.add_argument("--max-iter", type=int, default=200, help="L-BFGS iterations (default 200)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dizikit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="song, note and technique counts of a corpus")
    _add_common(p, corpus=True)
    p.add_argument("--check-published", action="store_true",
                   help="warn where totals differ from the published dataset size")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("tokenize", help="print one token line per piece")
    p.add_argument("input", help=".jp file or directory")
    _add_common(p, pieces=True)
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("export", help="convert a .jp score to MusicXML")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("synth", help="write a synthetic two-school corpus")
    p.add_argument("--pieces", type=int, default=200)
    p.add_argument("--measures", type=int, default=4)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a school classifier")
    _add_common(p, corpus=True, pieces=True)
    _add_classifier_opts(p)
    default = _model_default("classifier.txt")
    p.add_argument("--out", default=default, required=default is None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="k-fold evaluation of a classifier scheme")
    _add_common(p, corpus=True, pieces=True)
    _add_classifier_opts(p)
    p.add_argument("--folds", type=int, default=10)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("tag-train", help="train a technique tagger on one school")
    _add_common(p, corpus=True, pieces=True)
    _add_tagger_opts(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tag_train)

    p = sub.add_parser("tag-eval", help="k-fold accuracy / OOV accuracy of the tagger")
    _add_common(p, corpus=True, pieces=True)
    _add_tagger_opts(p)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--rules", help="rules file (CRF-RULES variant)")
    p.add_argument("--default-rules", action="store_true", help="use the built-in rest rule")
    p.set_defaults(func=cmd_tag_eval)

    p = sub.add_parser("transfer", help="melody + technique style transfer of one score")
    p.add_argument("--in", dest="input", required=True)
    default = _model_default("classifier.txt")
    p.add_argument("--classifier", default=default, required=default is None)
    p.add_argument("--tagger", required=True, help="tagger trained on the target school")
    p.add_argument("--rules", help="rules file for CRF-RULES decoding")
    p.add_argument("--default-rules", action="store_true")
    p.add_argument("--source", help="source school (default: the score header)")
    p.add_argument("--target", required=True)
    p.add_argument("--iterations", type=int, default=60)
    p.add_argument("--checkpoints", default="0,20,60")
    p.add_argument("--force", action="store_true", help="transfer windows the classifier assigns elsewhere")
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p, pieces=True)
    p.set_defaults(func=cmd_transfer)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScoreError, TransferError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
