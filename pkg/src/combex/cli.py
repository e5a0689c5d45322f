"""Command-line entry point: ``combex <subcommand> ...``.

Settings are layered as flags > ``--config`` JSON file > environment
(``COMBEX_SEED``) > built-in defaults.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from combex.corpus import Diagnostic, Instance, dump_corpus, instance_from_record, instance_to_record, load_corpus
from combex.evaluation import collapse_anycomb, score_ner, score_relations
from combex.linearizer import Mode, Ordering, Schema, Separator, delinearize_entities, linearize_text, relabel
from combex.model import Checkpoint, ModelConfig, TrainingDiverged, VocabMismatch, predict, train
from combex.synthgen import SynthConfig, generate
from combex.tokenizer import Vocab

logger = logging.getLogger("combex")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_MISMATCH = 4
EXIT_INVALID = 5
EXIT_DIVERGED = 6

_MODEL_FIELDS = {f.name for f in dataclasses.fields(ModelConfig)}
_CONFIG_KEYS = _MODEL_FIELDS | {"schema", "mode", "sep", "order", "strict", "lr"}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    mode: Mode = Mode.THREE_WAY
    sep: Separator = Separator.AT_DRUG
    order: Ordering = Ordering.DATASET_ORDER
    n_ctx: int = 0
    strict: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)

    @property
    def schema(self) -> Schema:
        return Schema(self.mode, self.sep, self.order)


def _read_config_file(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}", EXIT_IO) from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path} is not valid JSON: {exc}", EXIT_USAGE) from exc
    if not isinstance(data, dict):
        raise CliError(f"config {path} must hold a JSON object", EXIT_USAGE)
    return data


def resolve_config(args: argparse.Namespace, env: dict | None = None) -> RunConfig:
    """Merge defaults, environment, config file and flags, in rising priority."""
    env = os.environ if env is None else env
    layers: dict = {}
    if env.get("COMBEX_SEED"):
        try:
            layers["seed"] = int(env["COMBEX_SEED"])
        except ValueError as exc:
            raise CliError(f"COMBEX_SEED must be an integer, got {env['COMBEX_SEED']!r}", EXIT_USAGE) from exc
    if getattr(args, "config", None):
        from_file = _read_config_file(args.config)
        unknown = set(from_file) - _CONFIG_KEYS
        if unknown:
            raise CliError(f"unknown config key(s): {', '.join(sorted(unknown))}", EXIT_USAGE)
        layers.update(from_file)
    for key, value in vars(args).items():
        if value is not None and key not in ("config", "command", "func"):
            layers[key] = value
    # "schema" is the user-facing name of the linearization mode
    if "schema" in layers:
        layers["mode"] = layers.pop("schema")
    try:
        model_kw = {k: layers[k] for k in _MODEL_FIELDS if k in layers}
        if "lr" in layers:
            model_kw.setdefault("encoder_lr", layers["lr"])
            model_kw.setdefault("decoder_lr", layers["lr"])
        if "n_ctx" in layers:
            model_kw["n_ctx"] = layers["n_ctx"]
        return RunConfig(
            mode=Mode(layers.get("mode", Mode.THREE_WAY)),
            sep=Separator(layers.get("sep", Separator.AT_DRUG)),
            order=Ordering(layers.get("order", Ordering.DATASET_ORDER)),
            n_ctx=int(layers.get("n_ctx", 0)),
            strict=bool(layers.get("strict", False)),
            model=ModelConfig(**model_kw),
        )
    except (ValueError, TypeError) as exc:
        raise CliError(f"bad configuration: {exc}", EXIT_USAGE) from exc


# -- helpers --------------------------------------------------------------------

def _load(path: str, strict_valid: bool = True) -> tuple[list[Instance], list[Diagnostic]]:
    try:
        instances, problems = load_corpus(path)
    except OSError as exc:
        raise CliError(f"cannot read corpus {path}: {exc}", EXIT_IO) from exc
    for p in problems:
        print(f"{path}:{p.position}: {p.code}: {p.detail}", file=sys.stderr)
    if strict_valid and problems:
        raise CliError(f"{len(problems)} invalid record(s) in {path}", EXIT_INVALID)
    return instances, problems


def _write_text(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from exc


def _synth_corpus(args, seed: int) -> tuple[list[Instance], list[Instance]]:
    train_set = test_set = None
    if args.train:
        train_set, _ = _load(args.train)
    if args.test:
        test_set, _ = _load(args.test)
    if train_set is None or test_set is None:
        gen_train, gen_test = generate(SynthConfig(n_train=args.n_train, n_test=args.n_test, seed=seed))
        train_set = train_set if train_set is not None else gen_train
        test_set = test_set if test_set is not None else gen_test
    return train_set, test_set


def prediction_record(inst: Instance, ckpt: Checkpoint, strict: bool) -> dict:
    """Corpus-format record carrying the predicted relations."""
    rels, out = predict(inst, ckpt, strict=strict)
    rec = instance_to_record(Instance(inst.doc_id, inst.sentences, inst.target_index, inst.drugs, rels))
    rec["output"] = out.text
    rec["schema"] = {"mode": ckpt.schema.mode.value, "entity_sep": ckpt.schema.entity_sep.value,
                     "ordering": ckpt.schema.ordering.value}
    if ckpt.schema.mode is Mode.NER_EXTENDED:
        rec["entities"] = sorted(delinearize_entities(out.tokens, inst))
    rec["diagnostics"] = [str(d) for d in out.diagnostics]
    return rec


def score_records(pred_records: Sequence[dict], golds: Sequence[Instance], schema: Schema) -> dict:
    """Relation (and, under NER, entity) scores for aligned predictions."""
    index = {(g.doc_id, g.target_index): g for g in golds}
    preds, aligned = [], []
    for rec in pred_records:
        key = (str(rec["doc_id"]), int(rec["target_index"]))
        if key not in index:
            raise CliError(f"prediction for unknown instance {key}", EXIT_INVALID)
        preds.append(relabel(instance_from_record(rec).gold, schema.mode))
        aligned.append(index.pop(key))
    if index:
        raise CliError(f"{len(index)} gold instance(s) have no prediction", EXIT_INVALID)
    gold_rels = [relabel(g.gold, schema.mode) for g in aligned]
    report = {"relations": score_relations(preds, gold_rels, aligned, classes=_report_classes(schema)).to_dict()}
    if schema.mode is not Mode.TWO_WAY_POS:
        # NON-POS mixes COMB with NOCOMB, so there is nothing to collapse
        report["any_comb"] = score_relations(
            [collapse_anycomb(p) for p in preds], [collapse_anycomb(g) for g in gold_rels], aligned,
            classes=["ANY_COMB", "NOCOMB"]).to_dict()
    if schema.mode is Mode.NER_EXTENDED:
        ents = [rec.get("entities", sorted({d.text for d in instance_from_record(rec).drugs})) for rec in pred_records]
        report["entities"] = score_ner(ents, [set(g.drug_names) for g in aligned]).to_dict()
    return report


def _report_classes(schema: Schema) -> list[str]:
    return [lab.value for lab in schema.labels]


def _train_and_score(train_set, test_set, schema: Schema, cfg: ModelConfig, strict: bool) -> dict:
    ckpt = train(train_set, schema, cfg)
    records = [prediction_record(inst, ckpt, strict) for inst in test_set]
    return score_records(records, test_set, schema)


def _f1(report: dict, section: str, cls: str) -> float | None:
    entry = report.get(section, {}).get(cls)
    return None if entry is None else entry["f1"]


def _table(rows: list[dict], key: str) -> str:
    cols = [key, "POS_F1", "ANY_COMB_F1", "micro_F1"]
    lines = ["\t".join(cols)]
    for row in rows:
        rep = row["report"]
        vals = [_f1(rep, "relations", "POS"), _f1(rep, "any_comb", "ANY_COMB"), rep["relations"]["micro"]["f1"]]
        lines.append("\t".join([str(row[key])] + ["-" if v is None else f"{v:.4f}" for v in vals]))
    return "\n".join(lines) + "\n"


# -- subcommands ----------------------------------------------------------------

def cmd_ingest(args, cfg: RunConfig) -> int:
    instances, problems = _load(args.corpus, strict_valid=False)
    if args.out:
        try:
            dump_corpus(instances, args.out)
        except OSError as exc:
            raise CliError(f"cannot write {args.out}: {exc}", EXIT_IO) from exc
    print(json.dumps({"accepted": len(instances), "rejected": len(problems)}))
    return EXIT_INVALID if problems else EXIT_OK


def cmd_synth(args, cfg: RunConfig) -> int:
    try:
        train_set, test_set = generate(SynthConfig(n_train=args.n_train, n_test=args.n_test, seed=cfg.model.seed))
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    try:
        dump_corpus(train_set, args.train_out)
        dump_corpus(test_set, args.test_out)
    except OSError as exc:
        raise CliError(f"cannot write corpus: {exc}", EXIT_IO) from exc
    return EXIT_OK


def cmd_linearize(args, cfg: RunConfig) -> int:
    instances, _ = _load(args.corpus)
    schema = cfg.schema
    lines = [linearize_text(relabel(inst.gold, schema.mode), inst, schema) for inst in instances]
    _write_text(args.out, "".join(line + "\n" for line in lines))
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    instances, _ = _load(args.corpus)
    if not instances:
        raise CliError("no training instances", EXIT_INVALID)
    vocab = None
    if args.vocab:
        vocab = _load_vocab(args.vocab)
    try:
        ckpt = train(instances, cfg.schema, cfg.model, vocab=vocab, log_every=args.log_every)
    except TrainingDiverged as exc:
        exc.checkpoint.save(args.out)
        raise CliError(f"{exc}; last finite state saved to {args.out}", EXIT_DIVERGED) from exc
    try:
        ckpt.save(args.out)
        if args.vocab_out:
            ckpt.vocab.save(args.vocab_out)
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}", EXIT_IO) from exc
    print(json.dumps({"steps": ckpt.step, "final_loss": ckpt.history[-1], "vocab_hash": ckpt.vocab_hash}))
    return EXIT_OK


def _load_vocab(path: str) -> Vocab:
    try:
        return Vocab.load(path)
    except OSError as exc:
        raise CliError(f"cannot read vocabulary {path}: {exc}", EXIT_IO) from exc
    except (ValueError, IndexError) as exc:
        raise CliError(f"unusable vocabulary {path}: {exc}", EXIT_MISMATCH) from exc


def _load_checkpoint(path: str) -> Checkpoint:
    try:
        return Checkpoint.load(path)
    except VocabMismatch as exc:
        raise CliError(str(exc), EXIT_MISMATCH) from exc
    except OSError as exc:
        raise CliError(f"cannot read checkpoint {path}: {exc}", EXIT_IO) from exc
    except (ValueError, KeyError) as exc:
        raise CliError(f"unusable checkpoint {path}: {exc}", EXIT_MISMATCH) from exc


def cmd_predict(args, cfg: RunConfig) -> int:
    ckpt = _load_checkpoint(args.checkpoint)
    if args.vocab:
        vocab = _load_vocab(args.vocab)
        if vocab.digest() != ckpt.vocab_hash:
            raise CliError("vocabulary does not match the checkpoint", EXIT_MISMATCH)
    instances, _ = _load(args.corpus)
    records = [prediction_record(inst, ckpt, cfg.strict) for inst in instances]
    _write_text(args.out, "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records))
    return EXIT_OK


def cmd_score(args, cfg: RunConfig) -> int:
    golds, _ = _load(args.gold)
    try:
        with open(args.pred, encoding="utf-8") as fh:
            records = [json.loads(line) for line in fh if line.strip()]
    except OSError as exc:
        raise CliError(f"cannot read predictions {args.pred}: {exc}", EXIT_IO) from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"malformed prediction line: {exc}", EXIT_INVALID) from exc
    schema = cfg.schema
    if records and "schema" in records[0] and args.schema is None:
        schema = Schema(**records[0]["schema"])
    try:
        report = score_records(records, golds, schema)
    except (KeyError, ValueError) as exc:
        raise CliError(f"malformed prediction record: {exc}", EXIT_INVALID) from exc
    _write_text(args.out, json.dumps(report, indent=2) + "\n")
    return EXIT_OK


def cmd_ablate_context(args, cfg: RunConfig) -> int:
    train_set, test_set = _synth_corpus(args, cfg.model.seed)
    rows = []
    for n in args.n:
        if n < 0:
            raise CliError("context sizes must be non-negative", EXIT_USAGE)
        model_cfg = dataclasses.replace(cfg.model, n_ctx=n)
        logger.info("context n=%d", n)
        rows.append({"n": n, "report": _train_and_score(train_set, test_set, cfg.schema, model_cfg, cfg.strict)})
    _emit_ablation(args, rows, "n")
    return EXIT_OK


def cmd_ablate_separator(args, cfg: RunConfig) -> int:
    if cfg.mode is Mode.NER_EXTENDED:
        raise CliError("the NER-extended schema always uses ';'", EXIT_USAGE)
    train_set, test_set = _synth_corpus(args, cfg.model.seed)
    rows = []
    for sep in Separator:
        schema = Schema(cfg.mode, sep, cfg.order)
        logger.info("separator %s", sep.value)
        rows.append({"sep": sep.value, "report": _train_and_score(train_set, test_set, schema, cfg.model, cfg.strict)})
    _emit_ablation(args, rows, "sep")
    return EXIT_OK


def _emit_ablation(args, rows: list[dict], key: str) -> None:
    sys.stdout.write(_table(rows, key))
    if args.out:
        _write_text(args.out, json.dumps({"rows": rows}, indent=2) + "\n")


# -- parser ---------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--schema", choices=[m.value for m in Mode], default=None)
    p.add_argument("--sep", choices=[s.value for s in Separator], default=None)
    p.add_argument("--order", choices=[o.value for o in Ordering], default=None)
    p.add_argument("--n-ctx", dest="n_ctx", type=int, default=None)
    p.add_argument("--strict", action="store_true", default=None, help="grammar-constrained decoding")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None, help="JSON file of settings")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None, help="learning rate for encoder and decoder")
    p.add_argument("--encoder-lr", dest="encoder_lr", type=float, default=None)
    p.add_argument("--decoder-lr", dest="decoder_lr", type=float, default=None)
    p.add_argument("--embed-dim", dest="embed_dim", type=int, default=None)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)


def _ablation_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--train", default=None, help="training corpus (default: synthetic)")
    p.add_argument("--test", default=None, help="test corpus (default: synthetic)")
    p.add_argument("--n-train", dest="n_train", type=int, default=500)
    p.add_argument("--n-test", dest="n_test", type=int, default=100)
    p.add_argument("--out", default=None, help="JSON file for the per-row reports")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="combex", description="Drug-combination extraction as generation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and normalize a JSONL corpus")
    p.add_argument("corpus")
    p.add_argument("--out", default=None)
    _common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic train/test corpus")
    p.add_argument("--train-out", required=True)
    p.add_argument("--test-out", required=True)
    p.add_argument("--n-train", dest="n_train", type=int, default=500)
    p.add_argument("--n-test", dest="n_test", type=int, default=100)
    _common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("linearize", help="print gold target sequences, one per line")
    p.add_argument("corpus")
    p.add_argument("--out", default=None)
    _common(p)
    p.set_defaults(func=cmd_linearize)

    p = sub.add_parser("train", help="train a model and save a checkpoint")
    p.add_argument("corpus")
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    p.add_argument("--vocab", default=None, help="use this vocabulary file")
    p.add_argument("--vocab-out", default=None, help="also write the vocabulary")
    p.add_argument("--log-every", dest="log_every", type=int, default=0)
    _common(p)
    _model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="decode a corpus with a checkpoint")
    p.add_argument("corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", default=None, help="check this vocabulary against the checkpoint")
    p.add_argument("--out", default=None)
    _common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("score", help="score predictions against a gold corpus")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", default=None)
    _common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("ablate-context", help="train and score per context window size")
    p.add_argument("--n", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    _ablation_inputs(p)
    _common(p)
    _model_flags(p)
    p.set_defaults(func=cmd_ablate_context)

    p = sub.add_parser("ablate-separator", help="train and score with @DRUG@ and ';' separators")
    _ablation_inputs(p)
    _common(p)
    _model_flags(p)
    p.set_defaults(func=cmd_ablate_separator)
    return parser


_NON_CONFIG = {"corpus", "out", "train_out", "test_out", "vocab", "vocab_out", "log_every", "checkpoint",
               "gold", "pred", "n", "train", "test", "n_train", "n_test"}


def run(argv: Sequence[str] | None = None, env: dict | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    settings = argparse.Namespace(**{k: v for k, v in vars(args).items() if k not in _NON_CONFIG})
    try:
        cfg = resolve_config(settings, env)
        return args.func(args, cfg)
    except CliError as exc:
        print(f"combex {args.command}: {exc}", file=sys.stderr)
        return exc.code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
