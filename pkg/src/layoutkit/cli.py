"""Command-line entry point: ``layoutkit <subcommand> [--config FILE] [--section.key VALUE ...]``."""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import shutil
import sys
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import __version__
from .checkpoint import file_sha256
from .doc import Document, ValidationError, Vocabulary, load_corpus, prepare_document, save_corpus, tokenize
from .masking import ACTION_NAMES, IGNORE, build_example
from .model import ModelConfig
from .robustness import DEFAULT_P_SWAPS, robustness_report
from .sweep import AXES, DEFAULT_GRIDS, DEFAULT_SEEDS, SweepData, ablation_sweep
from .synth import GenSpec, corpus_stats, generate_corpus
from .train import (Checkpoint, FinetuneConfig, PretrainConfig, TrainingDiverged, derive_label_set,
                    evaluate_classification, evaluate_entities, finetune, pretrain, random_checkpoint)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
RUN_DIR_ENV = "LAYOUTKIT_RUN_DIR"
CORPUS_FILES = ("train.jsonl", "dev.jsonl", "test.jsonl")


class ConfigError(ValueError):
    pass


@dataclass
class EvalOptions:
    split: str = "test"
    p_swaps: list = field(default_factory=lambda: list(DEFAULT_P_SWAPS))
    seed: int = 0

    def __post_init__(self):
        if self.split not in ("train", "dev", "test"):
            raise ValueError(f"split must be train, dev or test, got {self.split!r}")
        self.p_swaps = [float(p) for p in self.p_swaps]
        if any(not 0.0 <= p <= 1.0 for p in self.p_swaps):
            raise ValueError("p_swaps must lie in [0, 1]")


@dataclass
class SweepOptions:
    axis: str = "strategy"
    grid: Optional[list] = None     # None picks the axis default
    seeds: list = field(default_factory=lambda: list(DEFAULT_SEEDS))
    jobs: int = 1

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}, got {self.axis!r}")
        if self.grid is not None and not self.grid:
            raise ValueError("grid must be non-empty")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")


SECTIONS = {
    "corpus": GenSpec,
    "model": ModelConfig,
    "pretrain": PretrainConfig,
    "finetune": FinetuneConfig,
    "eval": EvalOptions,
    "sweep": SweepOptions,
}
FILE_ONLY = {("corpus", "lexicon")}


def _default(f):
    if f.default is not MISSING:
        return f.default
    return f.default_factory()


def _check_type(key: str, value, default):
    """Loose type check against the field default; returns the coerced value."""
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
    elif isinstance(default, (list, tuple)):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return list(value)
    elif isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{key}: expected a mapping, got {value!r}")
    return value


def resolve_config(file_cfg: Optional[dict], overrides: dict[str, object]) -> dict:
    """Merge defaults, a config mapping and dotted overrides into validated section objects.

    Returns {"seed": int, section: dataclass instance}. Section seeds not given explicitly
    follow the global seed.
    """
    file_cfg = dict(file_cfg or {})
    unknown = set(file_cfg) - set(SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown config key: {sorted(unknown)[0]}")
    merged: dict[str, dict] = {}
    for name in SECTIONS:
        part = file_cfg.get(name) or {}
        if not isinstance(part, dict):
            raise ConfigError(f"{name}: expected a mapping")
        merged[name] = dict(part)
    seed = file_cfg.get("seed", 0)
    for key, value in overrides.items():
        if key == "seed":
            seed = value
            continue
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name:
            raise ConfigError(f"unknown config key: {key}")
        merged[section][name] = value
    seed = _check_type("seed", seed, 0)

    out = {"seed": seed}
    for section, cls in SECTIONS.items():
        spec = {f.name: f for f in fields(cls)}
        values = {}
        for name, value in merged[section].items():
            if name not in spec:
                raise ConfigError(f"unknown config key: {section}.{name}")
            values[name] = _check_type(f"{section}.{name}", value, _default(spec[name]))
        if "seed" in spec and "seed" not in values:
            values["seed"] = seed
        try:
            out[section] = cls(**values)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{section}: {e}") from None
    return out


def config_to_dict(cfg: dict) -> dict:
    d = {"seed": cfg["seed"]}
    for section in SECTIONS:
        obj = cfg[section]
        d[section] = obj.to_dict() if hasattr(obj, "to_dict") else asdict(obj)
    return d


def _hash_json(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# argument parsing


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML config file (sections: " + ", ".join(SECTIONS) + ", seed)")
    p.add_argument("--seed", dest="ovr:seed", metavar="INT", help="global seed")
    for section, cls in SECTIONS.items():
        g = p.add_argument_group(f"{section} options")
        for f in fields(cls):
            if (section, f.name) in FILE_ONLY:
                continue
            key = f"{section}.{f.name}"
            default = _default(f)
            g.add_argument(f"--{key}", dest=f"ovr:{key}", metavar="VALUE",
                           help=f"(default: {default!r})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="layoutkit", description="Layout-aware masked pre-training toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def cmd(name, help_text, corpus=False, checkpoint=False):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--out", help="run directory to create (must not exist); default is a fresh "
                                     f"numbered directory under ${RUN_DIR_ENV} or ./runs")
        if corpus:
            p.add_argument("--corpus", required=True, help="corpus directory holding train/dev/test.jsonl")
        if checkpoint:
            p.add_argument("--checkpoint", required=name != "finetune",
                           help="checkpoint archive" + (" (omit to start from random weights)" if name == "finetune" else ""))
        _add_config_flags(p)
        return p

    cmd("gen-corpus", "Generate the synthetic corpus (train/dev/test JSONL, vocabulary, statistics).")
    cmd("pretrain", "Pre-train an encoder with MLM and optional MPM.", corpus=True)
    cmd("finetune", "Fine-tune for entities or document classification.", corpus=True, checkpoint=True)
    cmd("eval", "Evaluate a fine-tuned checkpoint on one split.", corpus=True, checkpoint=True)
    cmd("robustness", "Entity F1 under increasing segment-swap probability.", corpus=True, checkpoint=True)
    p = cmd("sweep", "Ablation sweep over one axis with repeated seeds.", corpus=True)
    p.add_argument("--jobs", dest="ovr:sweep.jobs", metavar="INT",
                   help="worker processes for grid points and seeds (same as --sweep.jobs)")
    p = cmd("inspect", "Print tokens, 1D positions, boxes and mask actions for one document.", corpus=True)
    p.add_argument("--doc-id", help="document id (default: first document of the split)")
    p.add_argument("--split", default="train", choices=["train", "dev", "test"])
    p.add_argument("--mask", action="store_true", help="also draw a masking plan with the pretrain settings")
    p = sub.add_parser("rerun", help="Re-execute a run from its manifest.",
                       description="Re-execute a run from its manifest into a new run directory.")
    p.add_argument("run", help="run directory (or its manifest.json)")
    p.add_argument("--out", help="run directory to create")
    p.add_argument("--check", action="store_true", help="fail unless every output hash matches the original")
    return parser


def _parse_value(raw: str):
    try:
        return yaml.safe_load(raw)
    except yaml.YAMLError:
        return raw


def _overrides(args) -> dict:
    out = {}
    for k, v in vars(args).items():
        if k.startswith("ovr:") and v is not None:
            out[k[4:]] = _parse_value(v)
    return out


def _load_yaml(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML ({e})") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


# ---------------------------------------------------------------------------
# inputs and run directories


@dataclass
class CorpusDir:
    path: Path
    splits: dict
    vocab: Vocabulary
    hash: str


def load_corpus_dir(path) -> CorpusDir:
    root = Path(path)
    if root.is_file():
        raise ConfigError(f"--corpus expects a directory, got file {path}")
    missing = [f for f in CORPUS_FILES if not (root / f).is_file()]
    if missing:
        raise ConfigError(f"corpus directory {path} lacks {', '.join(missing)}")
    try:
        splits = {f.split(".")[0]: load_corpus(root / f) for f in CORPUS_FILES}
    except ValidationError as e:
        raise ConfigError(f"corpus {path}: {e}") from None
    hashes = [file_sha256(root / f) for f in CORPUS_FILES]
    vpath = root / "vocab.json"
    if vpath.is_file():
        vocab = Vocabulary.from_list(json.loads(vpath.read_text()))
        hashes.append(file_sha256(vpath))
    else:
        vocab = Vocabulary.from_words(w.text for docs in splits.values() for d in docs for w in d.words)
    return CorpusDir(root, splits, vocab, hashlib.sha256("".join(hashes).encode()).hexdigest())


def _load_checkpoint(path) -> Checkpoint:
    if path is None or not Path(path).is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    try:
        return Checkpoint.load(path)
    except (ValueError, KeyError, OSError) as e:
        raise ConfigError(f"checkpoint {path}: {e}") from None


def new_run_dir(command: str, out: Optional[str]) -> Path:
    """A fresh directory; existing runs are never reused or overwritten."""
    if out:
        path = Path(out)
        if path.exists():
            raise ConfigError(f"run directory already exists: {out}")
        return path
    root = Path(os.environ.get(RUN_DIR_ENV) or "runs")
    root.mkdir(parents=True, exist_ok=True)
    taken = {p.name for p in root.iterdir()}
    n = 1
    while f"{command}-{n:04d}" in taken or f".{command}-{n:04d}.partial" in taken:
        n += 1
    return root / f"{command}-{n:04d}"


class Run:
    """Writes into a hidden staging directory, renamed into place only on success."""

    def __init__(self, final: Path):
        self.final = final
        self.stage = final.parent / f".{final.name}.partial"
        self.outputs: dict[str, str] = {}

    def __enter__(self):
        self.stage.mkdir(parents=True)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.stage.rename(self.final)
        else:
            shutil.rmtree(self.stage, ignore_errors=True)
        return False

    def write(self, name: str, content) -> Path:
        path = self.stage / name
        if isinstance(content, bytes):
            path.write_bytes(content)
        else:
            path.write_text(content)
        self.outputs[name] = file_sha256(path)
        return path

    def record(self, name: str, path: Path):
        self.outputs[name] = file_sha256(path)


def _json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# commands


def cmd_gen_corpus(cfg, inputs, run: Run):
    spec = cfg["corpus"]
    train, dev, test = generate_corpus(spec)
    for name, docs in (("train", train), ("dev", dev), ("test", test)):
        save_corpus(docs, run.stage / f"{name}.jsonl")
        run.record(f"{name}.jsonl", run.stage / f"{name}.jsonl")
    run.write("vocab.json", json.dumps(Vocabulary.from_words(spec.all_words()).to_list()))
    report = corpus_stats(train + dev + test, spec.entity_tags)
    run.write("stats.json", _json(report.to_dict()))
    run.write("stats.txt", report.table() + "\n")
    print(report.table())
    return f"{len(train) + len(dev) + len(test)} documents"


def _ensure_vocab_fits(vocab: Vocabulary, model_cfg: ModelConfig):
    if len(vocab) > model_cfg.vocab_size:
        raise ConfigError(f"model.vocab_size={model_cfg.vocab_size} is smaller than the corpus vocabulary ({len(vocab)})")


def cmd_pretrain(cfg, inputs, run: Run):
    corpus = inputs["corpus"]
    _ensure_vocab_fits(corpus.vocab, cfg["model"])
    pc = cfg["pretrain"]

    def log(rec):
        if (rec["step"] + 1) % 50 == 0 or rec["step"] == 0:
            print(f"step {rec['step'] + 1}/{pc.steps} total {rec['total']:.4f} mlm {rec['mlm']:.4f}", flush=True)

    res = pretrain(pc, cfg["model"], corpus.splits["train"], corpus.vocab, log=log)
    res.checkpoint.meta["seed"] = cfg["seed"]
    res.checkpoint.save(run.stage / "checkpoint.lmk")
    run.record("checkpoint.lmk", run.stage / "checkpoint.lmk")
    run.write("trace.csv", res.trace_csv())
    return f"final total loss {res.trace[-1]['total']:.4f}"


def _labels_for(task: str, corpus: CorpusDir, spec: GenSpec) -> list[str]:
    if task == "entities":
        tags = []
        for d in corpus.splits["train"]:
            for w in d.words:
                if w.label is not None and w.label not in tags:
                    tags.append(w.label)
        order = [t for t in spec.entity_tags if t in tags] + sorted(t for t in tags if t not in spec.entity_tags)
        return derive_label_set(task, tags=order)
    classes = sorted({d.doc_class for d in corpus.splits["train"] if d.doc_class is not None})
    return derive_label_set(task, classes=classes)


def _report(ckpt: Checkpoint, docs) -> dict:
    if ckpt.task == "entities":
        return {lvl: r.to_dict() for lvl, r in evaluate_entities(ckpt, docs).items()}
    return evaluate_classification(ckpt, docs).to_dict()


def cmd_finetune(cfg, inputs, run: Run):
    corpus = inputs["corpus"]
    fc = cfg["finetune"]
    if "checkpoint" in inputs:
        base = inputs["checkpoint"]
    else:
        _ensure_vocab_fits(corpus.vocab, cfg["model"])
        base = random_checkpoint(cfg["model"], corpus.vocab, fc.one_d_mode or "local",
                                 fc.two_d_mode or "segment", seed=fc.seed)
    labels = _labels_for(fc.task, corpus, cfg["corpus"])
    res = finetune(fc, base, corpus.splits["train"], corpus.splits["dev"], labels)
    res.checkpoint.save(run.stage / "checkpoint.lmk")
    run.record("checkpoint.lmk", run.stage / "checkpoint.lmk")
    run.write("curve.csv", res.curve_csv())
    report = {"best_step": res.best_step, "best_dev_score": res.best_score,
              "test": _report(res.checkpoint, corpus.splits["test"])}
    run.write("report.json", _json(report))
    return f"best dev score {res.best_score:.4f} at step {res.best_step}"


def cmd_eval(cfg, inputs, run: Run):
    ckpt, corpus = inputs["checkpoint"], inputs["corpus"]
    if ckpt.task is None:
        raise ConfigError("checkpoint has no task head; fine-tune it first")
    docs = corpus.splits[cfg["eval"].split]
    report = _report(ckpt, docs)
    run.write("report.json", _json(report))
    if ckpt.task == "entities":
        lines = ["level,tag,precision,recall,f1"]
        for lvl in ("word", "entity"):
            for tag, c in report[lvl]["per_tag"].items():
                lines.append(f"{lvl},{tag},{c['precision']!r},{c['recall']!r},{c['f1']!r}")
            o = report[lvl]["overall"]
            lines.append(f"{lvl},overall,{o['precision']!r},{o['recall']!r},{o['f1']!r}")
        run.write("report.csv", "\n".join(lines) + "\n")
        return f"entity F1 {report['entity']['overall']['f1']:.4f}, word F1 {report['word']['overall']['f1']:.4f}"
    return f"accuracy {report['accuracy']:.4f}"


def cmd_robustness(cfg, inputs, run: Run):
    ckpt, corpus = inputs["checkpoint"], inputs["corpus"]
    if ckpt.task != "entities":
        raise ConfigError("robustness needs a checkpoint fine-tuned for entities")
    ev = cfg["eval"]
    table = robustness_report(ckpt, corpus.splits[ev.split], ev.p_swaps, seed=ev.seed)
    run.write("robustness.json", table.to_json())
    run.write("robustness.csv", table.to_csv())
    for r in table.rows:
        print(f"p_swap={r['p_swap']:.2f}  entity F1 {100 * r['entity']['overall']:.2f}"
              f"  word F1 {100 * r['word']['overall']:.2f}")
    return f"{len(table.rows)} rows"


def cmd_sweep(cfg, inputs, run: Run):
    corpus = inputs["corpus"]
    _ensure_vocab_fits(corpus.vocab, cfg["model"])
    sw = cfg["sweep"]
    grid = sw.grid if sw.grid is not None else DEFAULT_GRIDS[sw.axis]
    data = SweepData(corpus.splits["train"], corpus.splits["dev"], corpus.splits["test"], corpus.vocab,
                     _labels_for("entities", corpus, cfg["corpus"]))
    table = ablation_sweep(sw.axis, grid, cfg["pretrain"], cfg["finetune"], cfg["model"], data,
                           seeds=sw.seeds, jobs=sw.jobs)
    run.write("sweep.json", table.to_json())
    run.write("sweep.csv", table.to_csv())
    run.write("sweep.txt", table.table() + "\n")
    print(table.table())
    return f"{len(table.rows)} rows"


def inspect_table(doc: Document, vocab: Vocabulary, pc: PretrainConfig, mask: bool) -> tuple[str, dict]:
    seq = tokenize(prepare_document(doc), vocab, pc.one_d_mode, pc.two_d_mode, pc.max_len)
    plan = None
    if mask:
        from .masking import derive_seed, plan_to_record
        ex = build_example(seq, vocab, pc.strategy, pc.p_mlm, derive_seed(pc.seed, doc.doc_id, 0),
                           enable_mpm=pc.enable_mpm, p_mpm=pc.p_mpm)
        shown, plan = ex.seq, plan_to_record(ex)
    else:
        shown = seq
    header = f"{'idx':>4} {'token':<8} {'word':<14} {'seg':>4} {'pos':>4} {'box (bins)':<22}"
    if mask:
        header += f" {'action':<7} {'label':<8} {'box target'}"
    lines = [f"doc {doc.doc_id}  1D={pc.one_d_mode}  2D={pc.two_d_mode}", header]
    itos = vocab.to_list()
    for t in range(len(shown.tokens)):
        w = shown.word_index[t]
        word = shown.word_texts[w] if w >= 0 else ""
        box = ",".join(str(int(v)) for v in shown.qbox[t])
        line = (f"{t:>4} {itos[shown.tokens[t]]:<8} {word:<14} {shown.segment_index[t]:>4} "
                f"{shown.pos_1d[t]:>4} {box:<22}")
        if mask:
            lab = ex.mlm_labels[t]
            target = "" if np.isnan(ex.box_labels[t, 0]) else ",".join(f"{v:.3f}" for v in ex.box_labels[t])
            line += f" {ACTION_NAMES[int(ex.actions[t])]:<7} {itos[lab] if lab != IGNORE else '':<8} {target}"
        lines.append(line.rstrip())
    return "\n".join(lines), plan or {}


def cmd_inspect(cfg, inputs, run: Run, args):
    docs = inputs["corpus"].splits[args.split]
    if not docs:
        raise ConfigError(f"split {args.split} is empty")
    if args.doc_id is None:
        doc = docs[0]
    else:
        found = [d for d in docs if d.doc_id == args.doc_id]
        if not found:
            raise ConfigError(f"document {args.doc_id!r} not in the {args.split} split")
        doc = found[0]
    text, plan = inspect_table(doc, inputs["corpus"].vocab, cfg["pretrain"], args.mask)
    print(text)
    run.write("inspect.txt", text + "\n")
    if plan:
        run.write("plan.json", _json(plan))
    return doc.doc_id


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "robustness": cmd_robustness,
    "sweep": cmd_sweep,
    "inspect": cmd_inspect,
}


def _gather_inputs(paths: dict) -> dict:
    inputs = {}
    if paths.get("corpus"):
        inputs["corpus"] = load_corpus_dir(paths["corpus"])
    if paths.get("checkpoint"):
        inputs["checkpoint"] = _load_checkpoint(paths["checkpoint"])
    return inputs


def _input_hashes(paths: dict, inputs: dict) -> dict:
    out = {}
    if "corpus" in inputs:
        out["corpus"] = {"path": str(Path(paths["corpus"]).resolve()), "sha256": inputs["corpus"].hash}
    if "checkpoint" in inputs:
        out["checkpoint"] = {"path": str(Path(paths["checkpoint"]).resolve()),
                             "sha256": file_sha256(paths["checkpoint"])}
    return out


def execute(command: str, cfg: dict, paths: dict, extra: dict, out: Optional[str]) -> tuple[Path, dict]:
    """Run one command with a resolved config; returns the run directory and its manifest."""
    inputs = _gather_inputs(paths)
    final = new_run_dir(command, out)
    config_dict = config_to_dict(cfg)
    with Run(final) as run:
        fn = COMMANDS[command]
        ns = argparse.Namespace(**extra)
        summary = fn(cfg, inputs, run, ns) if command == "inspect" else fn(cfg, inputs, run)
        manifest = {
            "command": command,
            "version": __version__,
            "config": config_dict,
            "config_sha256": _hash_json(config_dict),
            "seed": cfg["seed"],
            "inputs": _input_hashes(paths, inputs),
            "extra": extra,
            "outputs": dict(sorted(run.outputs.items())),
            "summary": summary,
        }
        (run.stage / "manifest.json").write_text(_json(manifest))
    return final, manifest


def _rerun(args) -> tuple[Path, dict]:
    path = Path(args.run)
    man_path = path / "manifest.json" if path.is_dir() else path
    if not man_path.is_file():
        raise ConfigError(f"no manifest at {man_path}")
    try:
        original = json.loads(man_path.read_text())
        command = original["command"]
        file_cfg = original["config"]
    except (ValueError, KeyError) as e:
        raise ConfigError(f"{man_path}: unreadable manifest ({e})") from None
    if command not in COMMANDS:
        raise ConfigError(f"{man_path}: unknown command {command!r}")
    cfg = resolve_config(file_cfg, {})
    paths = {}
    for name, rec in original.get("inputs", {}).items():
        paths[name] = rec["path"]
    final, manifest = execute(command, cfg, paths, original.get("extra", {}), args.out)
    for name, rec in original.get("inputs", {}).items():
        if manifest["inputs"][name]["sha256"] != rec["sha256"]:
            print(f"warning: input {name} changed since the original run", file=sys.stderr)
    if args.check and manifest["outputs"] != original.get("outputs"):
        diff = sorted(k for k in set(manifest["outputs"]) | set(original.get("outputs", {}))
                      if manifest["outputs"].get(k) != original.get("outputs", {}).get(k))
        raise RuntimeError(f"rerun outputs differ from the original: {', '.join(diff)}")
    return final, manifest


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "rerun":
            final, manifest = _rerun(args)
        else:
            cfg = resolve_config(_load_yaml(args.config), _overrides(args))
            paths = {"corpus": getattr(args, "corpus", None), "checkpoint": getattr(args, "checkpoint", None)}
            extra = {k: getattr(args, k) for k in ("doc_id", "split", "mask") if hasattr(args, k)}
            final, manifest = execute(args.command, cfg, paths, extra, args.out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as e:
        print(f"training error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:  # noqa: BLE001 - one-line diagnostic for any runtime failure
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{manifest['command']}: {manifest['summary']} -> {final}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
