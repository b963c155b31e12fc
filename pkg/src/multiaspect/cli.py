"""Command-line pipeline: ingest, train, segment, summarize, predict,
evaluate, lexicon, synth.

All randomness flows from the --seed flag (or the config file); no
wall-clock entropy, so repeated runs produce byte-identical outputs.
Every output file carries the hash of the resolved configuration.
Exit codes: 0 ok, 1 usage, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import assignment, corpus as corpus_mod, evaluation, learning, model as model_mod
from . import rating as rating_mod, synth as synth_mod
from .errors import DataError, NumericalError, SummaryTooShortError, UsageError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _require(args, names):
    for name in names:
        if getattr(args, name.replace("-", "_"), None) is None:
            raise UsageError(f"--{name} is required for this command")


def _load_model_corpus(args, schema_from_model=True):
    params = model_mod.load_model(args.model)
    schema = params.schema
    corp = corpus_mod.load_corpus(args.corpus, schema, vocabulary=params.vocabulary)
    return params, corp


def cmd_ingest(args) -> int:
    schema = corpus_mod.AspectSchema.load(args.schema)
    corp = corpus_mod.load_corpus(args.input, schema, min_df=args.min_df)
    corpus_mod.save_corpus(corp, args.output)
    stats = {
        "reviews": len(corp.reviews),
        "sentences": corp.n_sentences,
        "vocabulary": len(corp.vocabulary),
        "fully_rated": sum(1 for r in corp.reviews if r.is_fully_rated()),
    }
    print(json.dumps(stats))
    return 0


def cmd_synth(args) -> int:
    cfg = {
        "command": "synth", "reviews": args.reviews, "seed": args.seed,
        "aspects": args.aspects, "with_overall": args.with_overall,
        "vocab": args.vocab, "correlation": args.correlation,
    }
    chash = _config_hash(cfg)
    schema = synth_mod.synthetic_schema(args.aspects, include_overall=args.with_overall)
    planted = synth_mod.make_planted_model(schema, args.vocab, rng_seed=args.seed)
    corp, assignments = synth_mod.generate_synthetic(
        schema, planted, args.reviews, rng_seed=args.seed,
        rating_correlation=args.correlation,
    )
    labels = synth_mod.assignments_to_labels(corp, assignments)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    schema.save(out / "schema.json")
    with open(out / "corpus.jsonl", "w", encoding="utf-8") as fh:
        for r in corp.reviews:
            obj = {
                "review_id": r.review_id, "item_id": r.item_id, "user_id": r.user_id,
                "sentences": [s.raw_text for s in r.sentences],
                "ratings": {
                    a: v for a, v in zip(schema.aspects, r.ratings) if v is not None
                },
                "config_hash": chash,
            }
            fh.write(json.dumps(obj) + "\n")
    with open(out / "labels.tsv", "w", encoding="utf-8") as fh:
        fh.write(f"# config_hash={chash}\n")
        for lab in labels:
            name = schema.aspects[lab.label]
            fh.write(f"{lab.review_id}\t{lab.sentence_index}\t{name}\n")
    model_mod.save_model(planted, out / "planted_model.json", config_hash=chash)
    print(json.dumps({"out": str(out), "reviews": args.reviews, "config_hash": chash}))
    return 0


def _train_config_from_args(args) -> tuple[dict, learning.TrainConfig]:
    file_cfg = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            file_cfg = json.load(fh)
    merged = dict(file_cfg)
    overrides = {
        "rng_seed": args.seed, "n_restarts": args.restarts, "reg_weight": args.reg,
        "max_outer_iters": args.max_outer, "epochs": args.epochs,
    }
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    if args.no_diversity:
        merged["diversity"] = False
    return merged, learning.TrainConfig.from_dict(merged)


def cmd_train(args) -> int:
    merged, tconfig = _train_config_from_args(args)
    mode = args.mode or merged.get("mode", "unsupervised")
    if mode not in ("unsupervised", "semi", "supervised"):
        raise UsageError(f"unknown training mode {mode!r}")
    schema_path = args.schema or merged.get("schema")
    corpus_path = args.corpus or merged.get("corpus")
    labels_path = args.labels or merged.get("labels")
    if schema_path is None or corpus_path is None:
        raise UsageError("training needs --schema and --corpus (flags or config file)")
    if mode == "supervised" and labels_path is None:
        raise UsageError("supervised training needs --labels")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    schema = corpus_mod.AspectSchema.load(schema_path)
    corp = corpus_mod.load_corpus(corpus_path, schema, min_df=args.min_df)
    if labels_path:
        corp = corp.with_labels(corpus_mod.load_labels(labels_path, corp))
    full_cfg = dict(merged)
    full_cfg.update({
        "command": "train", "mode": mode, "schema": str(schema_path),
        "corpus": str(corpus_path), "labels": str(labels_path) if labels_path else None,
        "train_config": tconfig.to_dict(),
    })
    chash = _config_hash(full_cfg)

    log_rows = []

    def monitor(event: dict):
        log_rows.append(event)

    if mode == "unsupervised":
        params, _state = learning.train_unsupervised(corp, tconfig, monitor)
    elif mode == "semi":
        params, _state = learning.train_semisupervised(corp, tconfig, monitor)
    else:
        params = learning.train_supervised(corp, tconfig, monitor)

    model_mod.save_model(params, out / "model.json", config_hash=chash)
    with open(out / "config_snapshot.json", "w", encoding="utf-8") as fh:
        json.dump({"config_hash": chash, **full_cfg}, fh, indent=2, default=str)
        fh.write("\n")
    with open(out / "training_log.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config_hash={chash}\n")
        writer = csv.writer(fh)
        writer.writerow([
            "event", "restart", "iteration", "objective", "label_changes",
            "hinge", "train_error",
        ])
        for ev in log_rows:
            writer.writerow([
                ev.get("event"), ev.get("restart", ""),
                ev.get("outer", ev.get("epoch", "")),
                ev.get("objective", ""), ev.get("changed", ""),
                ev.get("hinge", ""), ev.get("train_error", ""),
            ])
    print(json.dumps({"model": str(out / "model.json"), "config_hash": chash}))
    return 0


def _segmentable_reviews(corp):
    for ri, review in enumerate(corp.reviews):
        if not review.is_fully_rated():
            print(
                f"skipping review {review.review_id!r}: missing ratings",
                file=sys.stderr,
            )
            continue
        yield ri, review


def cmd_segment(args) -> int:
    params, corp = _load_model_corpus(args)
    cfg = {
        "command": "segment", "model": str(args.model), "corpus": str(args.corpus),
        "relax": args.relax, "diversity": not args.no_diversity,
    }
    chash = _config_hash(cfg)
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write(f"# config_hash={chash}\n")
        for _, review in _segmentable_reviews(corp):
            labels = assignment.segment_review(
                params, review, relax_by=args.relax, diversity=not args.no_diversity
            )
            for si, k in enumerate(labels):
                fh.write(f"{review.review_id}\t{si}\t{params.schema.aspects[k]}\n")
    return 0


def cmd_summarize(args) -> int:
    params, corp = _load_model_corpus(args)
    cfg = {"command": "summarize", "model": str(args.model), "corpus": str(args.corpus)}
    chash = _config_hash(cfg)
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write(f"# config_hash={chash}\n")
        for _, review in _segmentable_reviews(corp):
            try:
                chosen = assignment.summarize_review(params, review)
            except SummaryTooShortError as exc:
                print(f"review {review.review_id!r}: {exc}", file=sys.stderr)
                continue
            for k, si in enumerate(chosen):
                fh.write(f"{review.review_id}\t{params.schema.aspects[k]}\t{si}\n")
    return 0


def _labels_by_review(corp):
    out = {}
    for ri, mapping in corp.label_map().items():
        n = len(corp.reviews[ri].sentences)
        if all(si in mapping for si in range(n)):
            out[ri] = np.array([mapping[si] for si in range(n)], dtype=np.intp)
    return out


def cmd_predict(args) -> int:
    gamma, alpha = rating_mod.load_rating_model(args.rating_model)
    schema = gamma.schema
    corp = corpus_mod.load_corpus(args.corpus, schema, vocabulary=gamma.vocabulary)
    predictor = args.predictor
    if predictor == "joint" and alpha is None:
        raise DataError("rating model has no pairwise table; train with --predictor joint")
    seg_params = None
    label_arrays = None
    if predictor in ("segmented", "joint"):
        if args.labels:
            corp = corp.with_labels(corpus_mod.load_labels(args.labels, corp))
            label_arrays = _labels_by_review(corp)
        elif args.model:
            seg_params = model_mod.load_model(args.model)
        else:
            raise UsageError(f"--predictor {predictor} needs --labels or --model")
    cfg = {
        "command": "predict", "rating_model": str(args.rating_model),
        "corpus": str(args.corpus), "predictor": predictor,
        "labels": str(args.labels) if args.labels else None,
        "model": str(args.model) if args.model else None,
    }
    chash = _config_hash(cfg)
    overall = schema.overall_index
    with open(args.output, "w", encoding="utf-8") as fh:
        for ri, review in enumerate(corp.reviews):
            if predictor in ("segmented", "joint"):
                if label_arrays is not None:
                    if ri not in label_arrays:
                        print(
                            f"review {review.review_id!r}: incomplete labels; skipped",
                            file=sys.stderr,
                        )
                        continue
                    labels = label_arrays[ri]
                else:
                    if not review.is_fully_rated():
                        print(
                            f"review {review.review_id!r}: missing ratings; skipped",
                            file=sys.stderr,
                        )
                        continue
                    labels = assignment.segment_review(seg_params, review)
            # hide every rating except the mandatory overall vote
            hidden = [
                v if (overall is not None and k == overall) else None
                for k, v in enumerate(review.ratings)
            ]
            probe = corpus_mod.Review(
                review.review_id, review.item_id, review.user_id,
                review.sentences, hidden,
            )
            if predictor == "unsegmented":
                pred = rating_mod.predict_unsegmented(gamma, probe)
            elif predictor == "segmented":
                pred = rating_mod.predict_segmented(gamma, probe, labels)
            else:
                pred = rating_mod.predict_joint(gamma, alpha, probe, labels)
            fh.write(json.dumps({
                "review_id": review.review_id,
                "predictor": pred.predictor,
                "predictions": dict(zip(schema.aspects, pred.levels)),
                "config_hash": chash,
            }) + "\n")
    return 0


def _eval_segmentation(args) -> evaluation.EvalReport:
    params, corp = _load_model_corpus(args)
    corp = corp.with_labels(corpus_mod.load_labels(args.labels, corp))
    schema = params.schema
    predicted, true = [], []
    per_aspect_hit = {a: [0, 0] for a in schema.aspects}
    n_ambiguous = 0
    n_skipped = 0
    for ri, mapping in sorted(corp.label_map().items()):
        review = corp.reviews[ri]
        if not review.is_fully_rated():
            n_skipped += len(mapping)
            continue
        labels = assignment.segment_review(
            params, review, relax_by=args.relax, diversity=not args.no_diversity
        )
        for si, lab in sorted(mapping.items()):
            if lab == corpus_mod.AMBIGUOUS:
                n_ambiguous += 1
                continue
            predicted.append(int(labels[si]))
            true.append(lab)
            stats = per_aspect_hit[schema.aspects[lab]]
            stats[1] += 1
            if labels[si] == lab:
                stats[0] += 1
    acc = evaluation.accuracy(predicted, true)
    kappa = evaluation.cohens_kappa(acc, schema.n_aspects)
    return evaluation.EvalReport(
        task="segmentation",
        metrics={"accuracy": acc, "kappa": kappa, "n_scored": len(true)},
        per_aspect={
            a: (hit / n if n else float("nan")) for a, (hit, n) in per_aspect_hit.items()
        },
        excluded={"ambiguous": n_ambiguous, "missing_ratings": n_skipped},
    )


def _eval_rating(args) -> evaluation.EvalReport:
    schema = corpus_mod.AspectSchema.load(args.schema)
    corp = corpus_mod.load_corpus(args.corpus, schema, min_df=1)
    preds_by_id = {}
    with open(args.predictions, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            preds_by_id[obj["review_id"]] = obj["predictions"]
    predicted, truth = [], []
    n_missing = 0
    for review in corp.reviews:
        if review.review_id not in preds_by_id:
            n_missing += 1
            continue
        pmap = preds_by_id[review.review_id]
        predicted.append([pmap.get(a) for a in schema.aspects])
        truth.append(review.ratings)
    mse = evaluation.rating_mse(predicted, truth, schema)
    return evaluation.EvalReport(
        task="rating",
        metrics={"mse": mse, "n_reviews": len(predicted)},
        excluded={"reviews_without_predictions": n_missing},
    )


def _eval_ranking(args) -> evaluation.EvalReport:
    params, corp = _load_model_corpus(args)
    corp = corp.with_labels(corpus_mod.load_labels(args.labels, corp))
    rated = [ri for ri, r in enumerate(corp.reviews) if r.is_fully_rated()]
    sub = corpus_mod.subset(corp, rated)
    true_labels = {}
    for ri, mapping in sub.label_map().items():
        for si, lab in mapping.items():
            true_labels[(ri, si)] = lab
    mean_ap, per_aspect = evaluation.ranking_map(params, sub, true_labels)
    if args.curves_dir:
        out = Path(args.curves_dir)
        out.mkdir(parents=True, exist_ok=True)
        for k, name in enumerate(params.schema.aspects):
            ranked = evaluation.rank_sentences(params, sub, k)
            flags = [
                true_labels[(ri, si)] == k
                for ri, si, _ in ranked
                if (ri, si) in true_labels and true_labels[(ri, si)] != corpus_mod.AMBIGUOUS
            ]
            if not any(flags):
                continue
            curve, _ = evaluation.pr_curve_and_map(flags)
            with open(out / f"pr_{name}.csv", "w", newline="", encoding="utf-8") as fh:
                fh.write("recall,precision\n")
                for rec, prec in curve:
                    fh.write(f"{rec},{prec}\n")
    return evaluation.EvalReport(
        task="ranking",
        metrics={"map": mean_ap},
        per_aspect=per_aspect,
    )


def cmd_evaluate(args) -> int:
    if args.task == "segmentation":
        _require(args, ["model", "corpus", "labels"])
        report = _eval_segmentation(args)
    elif args.task == "rating":
        _require(args, ["predictions", "corpus", "schema"])
        report = _eval_rating(args)
    elif args.task == "ranking":
        _require(args, ["model", "corpus", "labels"])
        report = _eval_ranking(args)
    else:
        raise UsageError(f"unknown evaluation task {args.task!r}")
    cfg = {"command": "evaluate", "task": args.task}
    payload = {"config_hash": _config_hash(cfg), **report.to_dict()}
    text = json.dumps(payload, indent=2) + "\n"
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    print(text, end="")
    return 0


def cmd_lexicon(args) -> int:
    params = model_mod.load_model(args.model)
    rows = model_mod.top_words(params, args.aspect, rating=args.rating, n=args.top)
    cfg = {
        "command": "lexicon", "model": str(args.model), "aspect": args.aspect,
        "rating": args.rating, "top": args.top,
    }
    chash = _config_hash(cfg)
    lines = [f"# config_hash={chash}"]
    lines += [f"{rank}\t{word}\t{weight:.12g}" for rank, (word, weight) in enumerate(rows, 1)]
    text = "\n".join(lines) + "\n"
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        print(text, end="")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="multiaspect", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and canonicalize a review file")
    p.add_argument("--schema", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--min-df", type=int, default=5)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic corpus with planted labels")
    p.add_argument("--out", required=True)
    p.add_argument("--reviews", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--aspects", type=int, default=3)
    p.add_argument("--with-overall", action="store_true")
    p.add_argument("--vocab", type=int, default=300)
    p.add_argument("--correlation", type=float, default=0.5)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a segmentation model")
    p.add_argument("--config", help="JSON config; flags override")
    p.add_argument("--schema")
    p.add_argument("--corpus")
    p.add_argument("--labels")
    p.add_argument("--mode", choices=["unsupervised", "semi", "supervised"])
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--reg", type=float)
    p.add_argument("--max-outer", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--min-df", type=int, default=5)
    p.add_argument("--no-diversity", action="store_true")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", help="label each sentence with an aspect")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--relax", type=int, default=0)
    p.add_argument("--no-diversity", action="store_true")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("summarize", help="pick one sentence per aspect")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("predict", help="recover aspect ratings from text")
    p.add_argument("--rating-model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--predictor", choices=["unsegmented", "segmented", "joint"],
                   default="joint")
    p.add_argument("--labels", help="segmentation labels TSV")
    p.add_argument("--model", help="segmentation model to label sentences with")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score a task")
    p.add_argument("--task", required=True, choices=["segmentation", "rating", "ranking"])
    p.add_argument("--model")
    p.add_argument("--corpus")
    p.add_argument("--labels")
    p.add_argument("--schema")
    p.add_argument("--predictions")
    p.add_argument("--output")
    p.add_argument("--curves-dir")
    p.add_argument("--relax", type=int, default=0)
    p.add_argument("--no-diversity", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("lexicon", help="ranked word list for an aspect or rating level")
    p.add_argument("--model", required=True)
    p.add_argument("--aspect", required=True)
    p.add_argument("--rating", type=float)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--output")
    p.set_defaults(func=cmd_lexicon)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
