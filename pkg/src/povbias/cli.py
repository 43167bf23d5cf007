"""Command-line entry point: ``povbias <command> ...``.

Every artifact is written together with a ``<artifact>.manifest.json`` that
records the resolved configuration, the seed and content hashes of inputs.
Settings resolve as: command-line flag, then ``--config`` JSON, then default.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from . import corpus as cp
from . import models as md
from . import numerics as nx
from . import revision_miner as rm
from . import text_repr as tr
from . import train_eval as te

MODEL_DEFAULTS = {
    "architecture": "global",
    "channels": "wl",
    "hidden_dim": 100,
    "attn_dim": 100,
    "embed_dim": 100,
    "max_len": 64,
    "weight_sharing": "separate",
    "pretrained_words": False,
}
TRAIN_DEFAULTS = {
    "epochs": 10,
    "batch_size": 100,
    "learning_rate": 1e-3,
    "shuffle_each_epoch": True,
}
COMMON_DEFAULTS = {"seed": 0}
CONFIG_KEYS = set(MODEL_DEFAULTS) | set(TRAIN_DEFAULTS) | set(COMMON_DEFAULTS) | {"regime", "lexicon", "embeddings"}


class CliError(Exception):
    pass


def version_string() -> str:
    return f"povbias {__version__} (checkpoint format {nx.CHECKPOINT_VERSION})"


# ---------------------------------------------------------------------------
# helpers


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(artifact, command: str, config: dict, inputs: dict[str, Any]) -> Path:
    """Write ``<artifact>.manifest.json`` (or ``manifest.json`` inside a directory)."""
    artifact = Path(artifact)
    target = artifact / "manifest.json" if artifact.is_dir() else artifact.with_name(artifact.name + ".manifest.json")
    digests = {}
    for role, path in sorted(inputs.items()):
        if path is None:
            continue
        p = Path(path)
        if p.is_dir():
            digests[role] = {f.name: sha256_file(f) for f in sorted(p.iterdir()) if f.suffix in (".jsonl", ".json") and f.name != "manifest.json"}
        else:
            digests[role] = sha256_file(p)
    manifest = {
        "command": command,
        "config": config,
        "seed": config.get("seed"),
        "inputs": digests,
        "version": __version__,
        "checkpoint_format": nx.CHECKPOINT_VERSION,
    }
    target.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return target


def load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON config ({exc.msg})") from None
    if not isinstance(data, dict):
        raise CliError(f"{path}: config must be a JSON object")
    return data


def resolve(args: argparse.Namespace, defaults: dict, file_cfg: dict) -> dict:
    """Flag beats config file beats default."""
    out = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in file_cfg:
            out[key] = file_cfg[key]
        else:
            out[key] = default
    unknown = set(file_cfg) - CONFIG_KEYS
    if unknown:
        raise CliError(f"unknown config keys: {sorted(unknown)}")
    return out


def _ensure_parent(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _read_statement_inputs(path) -> list[dict]:
    """Statements to classify: JSONL rows with ``text`` and optional ``id`` / ``pos``."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                text = row["text"]
            except (json.JSONDecodeError, KeyError, TypeError):
                raise CliError(f"{path}:{lineno}: expected a JSON object with a text field") from None
            rows.append({"id": str(row.get("id", lineno)), "text": text, "pos": row.get("pos")})
    return rows


def _write_jsonl(path, rows) -> None:
    with open(_ensure_parent(path), "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_mine(args) -> int:
    summary = rm.MiningSummary()
    out = _ensure_parent(args.out)
    with open(args.dump, "rb") as src, open(out, "w", encoding="utf-8", newline="\n") as dst:
        for row in rm.mine(rm.parse_dump(src), summary):
            dst.write(rm.dump_row(row) + "\n")
    summary_path = Path(args.summary) if args.summary else out.with_name(out.name + ".summary.json")
    summary_path.write_text(json.dumps(summary.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_manifest(out, "mine", {"seed": None}, {"dump": args.dump})
    print(json.dumps(summary.as_dict()["edit_types"], sort_keys=True), file=sys.stderr)
    return 0


def cmd_prepare(args) -> int:
    file_cfg = load_config_file(args.config)
    cfg = resolve(args, {"regime": None, **COMMON_DEFAULTS}, file_cfg)
    if cfg["regime"] is None:
        raise CliError("--regime is required (flag or config file)")
    regime = cp.Regime(cfg["regime"])
    biased = cp.read_corpus(args.biased)
    pool = cp.read_corpus(args.neutral_pool)
    bad = [s.id for s in biased if not s.is_biased]
    if bad:
        raise CliError(f"--biased contains non-biased statements, e.g. {bad[0]!r}")
    neutral = cp.build_regime(biased, pool, regime, cfg["seed"])
    data = list(biased) + list(neutral)
    split = cp.split(data, cfg["seed"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cp.write_corpus(out / "corpus.jsonl", data)
    for name in ("train", "validation", "test"):
        cp.write_corpus(out / f"{name}.jsonl", getattr(split, name))
    meta = cp.split_to_json(split)
    meta["regime"] = regime.value
    meta["neutral_type_histogram"] = cp.type_histogram(neutral)
    meta["biased_type_histogram"] = cp.type_histogram(biased)
    (out / "split.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    cfg["regime"] = regime.value
    write_manifest(out, "prepare", cfg, {"biased": args.biased, "neutral_pool": args.neutral_pool})
    print(f"{regime.value}: {len(biased)} biased + {len(neutral)} neutral -> sizes {split.sizes()}", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    file_cfg = load_config_file(args.config)
    cfg = resolve(args, {**MODEL_DEFAULTS, **TRAIN_DEFAULTS, **COMMON_DEFAULTS}, file_cfg)
    lexicon_path = args.lexicon or file_cfg.get("lexicon")
    embeddings_path = args.embeddings or file_cfg.get("embeddings")
    model_cfg = md.ModelConfig(**{k: cfg[k] for k in MODEL_DEFAULTS}, seed=cfg["seed"])
    train_cfg = te.TrainConfig(
        epochs=cfg["epochs"], batch_size=cfg["batch_size"], learning_rate=cfg["learning_rate"],
        seed=cfg["seed"], shuffle_each_epoch=cfg["shuffle_each_epoch"],
    )
    split = cp.load_split_dir(args.data)
    lexicon = tr.load_lexicon(lexicon_path)
    result = te.train(model_cfg, train_cfg, split, lexicon, embeddings_path)
    out = _ensure_parent(args.out)
    te.checkpoint_save(result.params, result.encoder, out, {"best_epoch": result.best_epoch})
    log_path = Path(args.log) if args.log else out.with_name(out.name + ".log.jsonl")
    te.write_epoch_log(log_path, result.log)
    cfg["channels"] = md.channels_code(model_cfg.channels)
    cfg["lexicon"] = lexicon_path
    cfg["embeddings"] = embeddings_path
    inputs = {"data": args.data, "lexicon": lexicon_path, "embeddings": embeddings_path}
    write_manifest(out, "train", cfg, inputs)
    write_manifest(log_path, "train", cfg, inputs)
    print(f"best epoch {result.best_epoch}", file=sys.stderr)
    return 0


def _evaluation_statements(data: str, which: str) -> list[cp.LabeledStatement]:
    p = Path(data)
    if p.is_dir():
        return cp.read_corpus(p / f"{which}.jsonl")
    return cp.read_corpus(p)


def cmd_evaluate(args) -> int:
    params, encoder = te.checkpoint_load(args.checkpoint)
    statements = _evaluation_statements(args.data, args.split)
    metrics = te.evaluate(params, encoder, statements)
    out = _ensure_parent(args.out)
    te.write_metrics(out, metrics)
    write_manifest(out, "evaluate", {"split": args.split, "seed": params.config.seed, "threshold": md.DEFAULT_THRESHOLD},
                   {"checkpoint": args.checkpoint, "data": args.data})
    print(json.dumps(metrics.to_json()), file=sys.stderr)
    return 0


def cmd_classify(args) -> int:
    params, encoder = te.checkpoint_load(args.checkpoint)
    rows = _read_statement_inputs(args.input)
    out_rows = []
    if rows:
        batch = encoder.encode_batch([(r["text"], r["pos"]) for r in rows])
        probs = md.predict_proba(params, batch)
        for r, p in zip(rows, probs):
            out_rows.append({"id": r["id"], "label": md.classify(float(p), args.threshold).value, "probability": float(p)})
    _write_jsonl(args.out, out_rows)
    write_manifest(args.out, "classify", {"threshold": args.threshold, "seed": params.config.seed},
                   {"checkpoint": args.checkpoint, "input": args.input})
    return 0


def cmd_attention(args) -> int:
    params, encoder = te.checkpoint_load(args.checkpoint)
    if params.config.architecture is md.Architecture.VANILLA:
        raise CliError("attention weights need a global or hierarchical attention checkpoint")
    rows = _read_statement_inputs(args.input)
    out_rows = []
    for r in rows:
        enc = encoder.encode(r["text"], r["pos"])
        if enc.length == 0:
            raise CliError(f"statement {r['id']!r} has no tokens")
        res = md.forward(md.trim_batch(tr.EncodedBatch.stack([enc])), params)
        row = {
            "id": r["id"],
            "tokens": list(enc.tokens),
            "probability": float(res.probability.data[0]),
            "alpha": {k: v[0, : enc.length].tolist() for k, v in res.word_alpha.items()},
        }
        if res.channel_alpha is not None:
            row["channel_alpha"] = dict(zip(params.config.channels, res.channel_alpha[0].tolist()))
        out_rows.append(row)
    _write_jsonl(args.out, out_rows)
    write_manifest(args.out, "attention", {"seed": params.config.seed}, {"checkpoint": args.checkpoint, "input": args.input})
    return 0


def cmd_agreement(args) -> int:
    table = cp.read_judgments(args.judgments)
    alpha = cp.krippendorff_alpha(table)
    result = {"alpha": alpha, "items": len(table.items), "workers": len(table.workers), "ratings": len(table.ratings)}
    if args.out:
        out = _ensure_parent(args.out)
        out.write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
        write_manifest(out, "agreement", {"seed": None}, {"judgments": args.judgments})
    print(json.dumps(result))
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="povbias", description="Mine, build, train and inspect biased-statement classifiers.")
    parser.add_argument("--version", action="version", version=version_string())
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mine", help="extract single-statement POV edits from a revision dump")
    p.add_argument("--dump", required=True, help="MediaWiki XML dump with full revision history")
    p.add_argument("--out", required=True, help="output JSONL of statement diffs")
    p.add_argument("--summary", help="summary JSON path (default: <out>.summary.json)")
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("prepare", help="build a dataset regime and a 70/10/20 split")
    p.add_argument("--biased", required=True, help="JSONL of biased statements")
    p.add_argument("--neutral-pool", required=True, help="JSONL of candidate neutral statements")
    p.add_argument("--regime", choices=[r.value for r in cp.Regime], help="how neutral statements are sampled")
    p.add_argument("--seed", type=int, help="sampling and split seed (default 0)")
    p.add_argument("--config", help="JSON file with default settings")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a classifier on a prepared split")
    p.add_argument("--data", required=True, help="directory written by prepare")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="epoch log JSONL (default: <out>.log.jsonl)")
    p.add_argument("--config", help="JSON file with default settings")
    p.add_argument("--architecture", choices=[a.value for a in md.Architecture], help="default global")
    p.add_argument("--channels", help="w, wp, wl or wpl (default wl)")
    p.add_argument("--hidden-dim", type=int, help="GRU state size (default 100)")
    p.add_argument("--attn-dim", type=int, help="attention projection size (default 100)")
    p.add_argument("--embed-dim", type=int, help="embedding size per channel (default 100)")
    p.add_argument("--max-len", type=int, help="tokens kept per statement (default 64)")
    p.add_argument("--weight-sharing", choices=[w.value for w in md.WeightSharing], help="default separate")
    p.add_argument("--pretrained-words", action="store_true", default=None, help="freeze word vectors loaded from --embeddings")
    p.add_argument("--embeddings", help="word vectors in GloVe text format")
    p.add_argument("--lexicon", help="category lexicon TSV (default: bundled demo lexicon)")
    p.add_argument("--epochs", type=int, help="default 10")
    p.add_argument("--batch-size", type=int, help="default 100")
    p.add_argument("--learning-rate", type=float, help="Adam step size (default 0.001)")
    p.add_argument("--no-shuffle", dest="shuffle_each_epoch", action="store_false", default=None, help="keep training order fixed")
    p.add_argument("--seed", type=int, help="initialisation and shuffling seed (default 0)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="precision/recall/F1 for the biased class")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="prepared directory or labeled JSONL")
    p.add_argument("--split", default="test", choices=["train", "validation", "test"], help="split to use when --data is a directory")
    p.add_argument("--out", required=True, help="metrics JSON path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("classify", help="label statements as biased or neutral")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="JSONL rows with text (and optional id, pos)")
    p.add_argument("--out", required=True, help="output JSONL")
    p.add_argument("--threshold", type=float, default=md.DEFAULT_THRESHOLD, help="biased iff probability >= threshold")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("attention", help="per-token attention weights from an attention model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="JSONL rows with text (and optional id, pos)")
    p.add_argument("--out", required=True, help="output JSONL")
    p.set_defaults(func=cmd_attention)

    p = sub.add_parser("agreement", help="Krippendorff's alpha over crowd judgments")
    p.add_argument("--judgments", required=True, help="JSONL rows with worker_id, item_id, rating")
    p.add_argument("--out", help="optional JSON output path")
    p.set_defaults(func=cmd_agreement)
    return parser


FATAL = (
    CliError,
    OSError,
    ValueError,
    IndexError,
    RuntimeError,
    FloatingPointError,
)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except rm.DumpParseError as exc:
        print(f"error: dump parse failure at byte {exc.offset}: {exc}", file=sys.stderr)
    except FATAL as exc:
        print(f"error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
