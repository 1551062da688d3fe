"""Command-line entry point: ``treedec <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Artifact-producing commands write ``manifest.json`` next to their outputs.
Relative input paths that do not exist are looked up under ``$TREEDEC_DATA``.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import subprocess
import sys
import time
from pathlib import Path
from typing import Sequence

from . import __version__, metrics
from .depgraph import ConlluError, format_conllu, load_labels
from .transitions import InvalidTransition, NotProjective, format_sequence, parse_sequence, run

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- manifests


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _revision() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5)
        if out.returncode == 0:
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"treedec-{__version__}"


@dataclasses.dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    revision: str
    started: float
    finished: float | None = None
    inputs: dict = dataclasses.field(default_factory=dict)

    @classmethod
    def start(cls, command: str, config: dict, seed: int | None, inputs: Sequence[str | Path] = ()) -> "RunManifest":
        config = {k: v for k, v in config.items() if not callable(v)}
        digests = {str(p): _digest(Path(p)) for p in inputs if p and Path(p).is_file()}
        return cls(command, config, seed, _revision(), time.time(), inputs=digests)

    def write(self, directory: str | Path) -> Path:
        self.finished = time.time()
        path = Path(directory) / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")
        return path


# ---------------------------------------------------------------- configs


def _coerce(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_overrides(extra: Sequence[str]) -> dict:
    """``--key value`` pairs (``--key=value`` too) into a dict, values JSON-decoded when possible."""
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"override --{key} needs a value")
            value = extra[i + 1]
            i += 2
        out[key.replace("-", "_")] = _coerce(value)
    return out


def resolve_config(cls, file: str | None, overrides: dict, defaults: dict | None = None):
    """Instantiate dataclass ``cls``; precedence flag > file > default."""
    merged = dict(defaults or {})
    if file:
        merged.update(json.loads(Path(file).read_text()))
    merged.update(overrides)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(merged) - known
    if unknown:
        raise UsageError(f"unknown config keys for {cls.__name__}: {', '.join(sorted(unknown))}")
    if hasattr(cls, "from_dict"):
        return cls.from_dict(merged)
    return cls(**merged)


def _split_overrides(overrides: dict, *classes) -> list[dict]:
    parts = [{} for _ in classes]
    for k, v in overrides.items():
        for part, cls in zip(parts, classes):
            if k in {f.name for f in dataclasses.fields(cls)}:
                part[k] = v
                break
        else:
            raise UsageError(f"unknown option --{k}")
    return parts


def _write_lines(path: str | Path | None, lines: Sequence[str]) -> None:
    text = "".join(line + "\n" for line in lines)
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")


_INPUT_ARGS = ("src", "tgt", "conllu", "dev_src", "dev_tgt", "dev_conllu", "labels", "config",
               "transitions_file", "checkpoint", "input", "hyp", "ref")


def _resolve_inputs(args) -> None:
    root = os.environ.get("TREEDEC_DATA")
    if not root:
        return
    for name in _INPUT_ARGS:
        value = getattr(args, name, None)
        if value and not Path(value).is_absolute() and not Path(value).exists() and (Path(root) / value).exists():
            setattr(args, name, str(Path(root) / value))


def _out_dir(path: str | None) -> Path | None:
    if path is None or path == "-":
        return None
    return Path(path).parent


# ---------------------------------------------------------------- commands


def cmd_oracle(args, extra) -> int:
    from .training import prepare_corpus

    corpus = prepare_corpus(args.src, args.tgt, args.conllu)
    _write_lines(args.output, [format_sequence(p.transitions) for p in corpus.pairs])
    if args.source_output:
        _write_lines(args.source_output, [" ".join(p.source) for p in corpus.pairs])
    report = {"kept": len(corpus.pairs), "dropped": dict(corpus.dropped)}
    print(json.dumps(report), file=sys.stderr)
    if (d := _out_dir(args.output)) is not None:
        m = RunManifest.start("oracle", vars(args), None, [args.src, args.tgt, args.conllu])
        m.config["report"] = report
        m.write(d)
    return EXIT_OK


def cmd_execute(args, extra) -> int:
    lines = Path(args.transitions_file).read_text(encoding="utf-8").splitlines()
    trees = []
    for n, line in enumerate(lines, 1):
        try:
            state = run(parse_sequence(line))
        except (InvalidTransition, ValueError) as e:
            raise ValueError(f"line {n}: {e}") from e
        trees.append(state.graph().to_word_tree())
    _write_lines(args.output, format_conllu(trees).splitlines())
    if (d := _out_dir(args.output)) is not None:
        RunManifest.start("execute", vars(args), None, [args.transitions_file]).write(d)
    return EXIT_OK


def cmd_synth(args, extra) -> int:
    from .synthlang import GrammarSpec, generate

    cfg = resolve_config(GrammarSpec, args.config, {k: v for k, v in parse_overrides(extra).items()})
    if isinstance(cfg.exclude, list):
        cfg = dataclasses.replace(cfg, exclude=frozenset(cfg.exclude))
    corpus = generate(cfg)
    corpus.write(args.out)
    config = {k: v for k, v in dataclasses.asdict(cfg).items() if k not in ("lexicon", "exclude")}
    RunManifest.start("synth", config, cfg.seed, [args.config] if args.config else []).write(args.out)
    print(f"wrote {len(corpus)} pairs to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_train(args, extra) -> int:
    from .model import ModelConfig
    from .training import Trainer, TrainConfig, build_vocabularies, encode_corpus, prepare_corpus
    from .model import build_model

    file_cfg = json.loads(Path(args.config).read_text()) if args.config else {}
    flags = parse_overrides(extra)
    if args.variant:
        flags["variant"] = args.variant
    m_file, t_file = _split_overrides(file_cfg, ModelConfig, TrainConfig)
    m_flag, t_flag = _split_overrides(flags, ModelConfig, TrainConfig)
    labels = load_labels(args.labels)
    corpus = prepare_corpus(args.src, args.tgt, args.conllu)
    if not corpus.pairs:
        raise ValueError("no usable training pairs")
    src_vocab, vocab = build_vocabularies(corpus, labels)
    sizes = {"src_vocab_size": len(src_vocab), "tgt_vocab_size": len(vocab), "n_labels": len(labels)}
    mcfg = ModelConfig.from_dict({**m_file, **m_flag, **sizes})
    tcfg = resolve_config(TrainConfig, None, {**t_file, **t_flag})
    data = encode_corpus(corpus, src_vocab, vocab, mcfg)
    dev = None
    if args.dev_src:
        dev = encode_corpus(prepare_corpus(args.dev_src, args.dev_tgt, args.dev_conllu), src_vocab, vocab, mcfg)
    out = Path(args.out)
    manifest = RunManifest.start(
        "train", {"model": dataclasses.asdict(mcfg), "train": dataclasses.asdict(tcfg)}, tcfg.seed,
        [args.src, args.tgt, args.conllu, args.dev_src, args.dev_tgt, args.dev_conllu])
    meta = {"vocab": vocab.to_json(), "src_vocab": src_vocab.to_json(), "dropped": dict(corpus.dropped)}
    trainer = Trainer(build_model(mcfg, vocab, seed=tcfg.seed), tcfg, out, meta)
    trainer.fit(data, dev)
    manifest.write(out)
    print(f"trained {trainer.step} steps; checkpoints in {out}", file=sys.stderr)
    return EXIT_OK


def cmd_translate(args, extra) -> int:
    from .decoding import translate
    from .training import load_checkpoint
    from .transitions import SourceVocabulary, Vocabulary

    model, meta, _ = load_checkpoint(args.checkpoint)
    vocab = Vocabulary.from_json(meta["vocab"])
    src_vocab = SourceVocabulary.from_json(meta["src_vocab"])
    hyps, seqs, trees = [], [], []
    for line in Path(args.input).read_text(encoding="utf-8").splitlines():
        if not line.split():
            hyps.append("")
            seqs.append("")
            continue
        out = translate(model, src_vocab.encode_tokens(line.split()), vocab, beam=args.beam,
                        constrain=not args.no_constrain, strict=args.strict)
        hyps.append(out.text)
        seqs.append(" ".join(out.tokens))
        if out.graph.tokens:
            trees.append(out.graph.to_word_tree())
    _write_lines(args.output, hyps)
    if args.transitions_output:
        _write_lines(args.transitions_output, seqs)
    if args.conllu_output:
        _write_lines(args.conllu_output, format_conllu(trees).splitlines())
    if (d := _out_dir(args.output)) is not None:
        RunManifest.start("translate", vars(args), None, [args.checkpoint, args.input]).write(d)
    return EXIT_OK


def cmd_score(args, extra) -> int:
    hyps = Path(args.hyp).read_text(encoding="utf-8").splitlines()
    refs = Path(args.ref).read_text(encoding="utf-8").splitlines()
    if args.per_sentence:
        fn = metrics.sentence_bleu if args.metric == "bleu" else metrics.sentence_chrf
        if len(hyps) != len(refs):
            raise ValueError(f"{len(hyps)} hypotheses but {len(refs)} references")
        for i, (h, r) in enumerate(zip(hyps, refs)):
            print(json.dumps({"index": i, args.metric: round(fn(h, r), 4)}))
        return EXIT_OK
    value = metrics.bleu(hyps, refs) if args.metric == "bleu" else metrics.chrf_plus(hyps, refs)
    print(f"{value:.2f}")
    return EXIT_OK


def cmd_challenge(args, extra) -> int:
    from .challenge import ChallengeConfig, format_report, run_challenge

    cfg = resolve_config(ChallengeConfig, args.config, parse_overrides(extra))
    manifest = RunManifest.start("challenge", dataclasses.asdict(cfg), None, [args.config] if args.config else [])
    report = run_challenge(cfg, args.out)
    manifest.write(args.out)
    print(format_report(report))
    return EXIT_OK


def cmd_gradcheck(args, extra) -> int:
    from .gradcheck import TOLERANCE, run_all

    results = run_all(instances=args.instances, seed=args.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name:<20} max rel err {r.max_rel_error:.2e} ({r.instances} instances)")
    worst = max(r.max_rel_error for r in results)
    print(f"max relative error {worst:.2e} (tolerance {TOLERANCE:g})")
    return EXIT_OK if worst < TOLERANCE else EXIT_NUMERIC


def cmd_maskdump(args, extra) -> int:
    from .masks import bidirectional_mask, parent_mask, vanilla_mask

    if args.kind == "parent":
        if not args.transitions:
            raise UsageError("parent masks need --transitions")
        graph = run(parse_sequence(args.transitions)).graph()
        d = args.d or len(graph.tokens)
        mask = parent_mask(graph, d)
        header = graph.tokens
        print("  ".join(f"{i}:{t.surface}" for i, t in enumerate(header)))
    elif args.kind == "bidirectional":
        if args.d is None:
            raise UsageError("bidirectional masks need --d")
        mask = bidirectional_mask(args.d, args.d if args.n is None else args.n)
    else:
        if args.d is None:
            raise UsageError("vanilla masks need --d")
        mask = vanilla_mask(args.d)
    print(mask.ascii())
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="treedec", description="Joint translation and dependency-structure decoding.")
    p.add_argument("--version", action="version", version=f"treedec {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("oracle", help="gold trees + segmented text -> transition sequences")
    s.add_argument("--src", required=True)
    s.add_argument("--tgt", required=True, help="segmented target text (@@ continuation)")
    s.add_argument("--conllu", required=True)
    s.add_argument("-o", "--output", default="-")
    s.add_argument("--source-output", help="write the kept source lines here")
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("execute", help="transition sequences -> CoNLL-U")
    s.add_argument("transitions_file", metavar="transitions")
    s.add_argument("-o", "--output", default="-")
    s.set_defaults(func=cmd_execute)

    s = sub.add_parser("synth", help="generate a synthetic corpus; GrammarSpec keys as --key value")
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_synth, extra=True)

    s = sub.add_parser("train", help="train a model; ModelConfig/TrainConfig keys as --key value")
    s.add_argument("--src", required=True)
    s.add_argument("--tgt", required=True)
    s.add_argument("--conllu", required=True)
    s.add_argument("--dev-src")
    s.add_argument("--dev-tgt")
    s.add_argument("--dev-conllu")
    s.add_argument("--variant")
    s.add_argument("--labels", help="label inventory file, one per line")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train, extra=True)

    s = sub.add_parser("translate", help="decode source text with a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("-o", "--output", default="-")
    s.add_argument("--beam", type=int, default=4)
    s.add_argument("--no-constrain", action="store_true")
    s.add_argument("--strict", action="store_true", help="EOS only when a single tree remains")
    s.add_argument("--transitions-output")
    s.add_argument("--conllu-output")
    s.set_defaults(func=cmd_translate)

    s = sub.add_parser("score", help="corpus BLEU or chrF+")
    s.add_argument("hyp")
    s.add_argument("ref")
    s.add_argument("--metric", choices=("bleu", "chrf+"), default="bleu")
    s.add_argument("--per-sentence", action="store_true")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("challenge", help="synth -> train variants -> slot accuracy + sign tests")
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_challenge, extra=True)

    s = sub.add_parser("gradcheck", help="finite-difference checks of all layers")
    s.add_argument("--instances", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("maskdump", help="print an attention mask as a grid")
    s.add_argument("kind", choices=("vanilla", "bidirectional", "parent"))
    s.add_argument("--d", type=int)
    s.add_argument("--n", type=int)
    s.add_argument("--transitions", help="transition sequence for parent masks")
    s.set_defaults(func=cmd_maskdump)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    from .training import DataError, NumericalError

    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        if extra and not getattr(args, "extra", False):
            raise UsageError(f"unrecognized arguments: {' '.join(extra)}")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        _resolve_inputs(args)
        return args.func(args, extra)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ConlluError, DataError, NotProjective, InvalidTransition, ValueError, KeyError,
            json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
