"""Command-line front end: synth, train, predict, fuse, eval, sweep.

Every option can also come from a ``key=value`` config file (``--config``);
explicit flags win, unknown keys are errors.  Each run echoes its fully
resolved configuration to stderr as ``key=value`` lines, and feeding that
block back as a config file reproduces the run.

Exit codes: 0 success, 2 usage/configuration error, 1 runtime or data
error.  The optional environment variable ``RELRANK_THREADS`` caps the
numeric thread count (default: available parallelism).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from . import datamodel, metrics, retrieval, synth, trainer

PROG = "relrank"

_thread_limiter = None  # keeps a threadpoolctl limiter alive for the process


class UsageError(ValueError):
    """Bad flags, bad config keys/values, or inconsistent settings."""


# ---------------------------------------------------------------------------
# option plumbing
# ---------------------------------------------------------------------------


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered == "true":
        return True
    if lowered == "false":
        return False
    raise ValueError("expected 'true' or 'false'")


def _parse_int(raw: str) -> int:
    return int(raw.strip())


def _parse_float(raw: str) -> float:
    return float(raw.strip())


def _parse_int_list(raw: str) -> tuple[int, ...]:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise ValueError("expected a comma-separated list of integers")
    return tuple(int(p) for p in parts)


def _parse_float_list(raw: str) -> tuple[float, ...]:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise ValueError("expected a comma-separated list of numbers")
    return tuple(float(p) for p in parts)


def _parse_path_list(raw: str) -> tuple[str, ...]:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise ValueError("expected a comma-separated list of paths")
    return tuple(parts)


def _choice(*allowed: str) -> Callable[[str], str]:
    def parse(raw: str) -> str:
        value = raw.strip()
        if value not in allowed:
            raise ValueError(f"expected one of {', '.join(allowed)}")
        return value

    return parse


def _unparse(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(_unparse(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class _Opt:
    dest: str
    parse: Callable[[str], object]
    default: object = None
    required: bool = False
    help: str = ""
    metavar: str = "VALUE"

    @property
    def flag(self) -> str:
        return "--" + self.dest.replace("_", "-")


@dataclass(frozen=True)
class _Command:
    name: str
    help: str
    opts: tuple[_Opt, ...]
    prepare: Callable[[dict], dict]
    run: Callable[[dict], int]


def _parse_config_file(path: str) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}")
    values: dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}: line {number}: expected key=value, got {line!r}")
        key, value = stripped.split("=", 1)
        key = key.strip().replace("-", "_")
        if key in values:
            raise UsageError(f"{path}: line {number}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def _resolve(command: _Command, args: argparse.Namespace) -> dict:
    file_values: dict[str, str] = {}
    if args.config is not None:
        file_values = _parse_config_file(args.config)
        known = {o.dest for o in command.opts}
        for key in file_values:
            if key not in known:
                raise UsageError(f"unknown config key {key!r} for '{command.name}'")
    resolved: dict = {}
    for opt in command.opts:
        raw = getattr(args, opt.dest)
        if raw is None and opt.dest in file_values:
            raw = file_values[opt.dest]
        if raw is None:
            if opt.required:
                raise UsageError(f"missing required option {opt.flag}")
            resolved[opt.dest] = opt.default
            continue
        try:
            resolved[opt.dest] = opt.parse(raw)
        except ValueError as exc:
            raise UsageError(f"invalid value for {opt.flag}: {raw!r} ({exc})")
    return resolved


def _echo_config(command: _Command, resolved: dict) -> None:
    print(f"# resolved config: {PROG} {command.name}", file=sys.stderr)
    for opt in command.opts:
        value = resolved[opt.dest]
        if value is None:
            continue
        print(f"{opt.dest}={_unparse(value)}", file=sys.stderr)


def _apply_thread_limit() -> None:
    global _thread_limiter
    raw = os.environ.get("RELRANK_THREADS")
    if raw is None or raw == "":
        return
    try:
        count = int(raw)
        if count < 1:
            raise ValueError
    except ValueError:
        raise UsageError(f"RELRANK_THREADS must be a positive integer, got {raw!r}")
    try:
        import threadpoolctl

        _thread_limiter = threadpoolctl.threadpool_limits(limits=count)
    except ImportError:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(count))


# ---------------------------------------------------------------------------
# shared loading helpers
# ---------------------------------------------------------------------------


def _load_pooled(path: str) -> datamodel.FeatureSet:
    return datamodel.mean_pool(datamodel.load_features(path))


def _load_table(path: str, candidates_path: str | None) -> datamodel.RelevanceTable:
    candidates = datamodel.load_candidates(candidates_path) if candidates_path else None
    return datamodel.load_relevance(path, candidates)


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

_SYNTH_OPTS = (
    _Opt("out", str, required=True, help="output directory", metavar="DIR"),
    _Opt("n_items", _parse_int, 500, help="number of items"),
    _Opt("n_clusters", _parse_int, 20, help="number of planted clusters"),
    _Opt("raw_dim", _parse_int, 64, help="feature dimension per channel"),
    _Opt("channels", _parse_int, 2, help="number of feature channels"),
    _Opt("noise_sigma", _parse_float, 0.5, help="latent noise level"),
    _Opt("truth_len", _parse_int, 30, help="ground-truth list length M"),
    _Opt("seed", _parse_int, 0, help="generator seed"),
)


def _prepare_synth(cfg: dict) -> dict:
    cfg["synth_config"] = synth.SynthConfig(
        n_items=cfg["n_items"],
        n_clusters=cfg["n_clusters"],
        raw_dim=cfg["raw_dim"],
        n_channels=cfg["channels"],
        noise_sigma=cfg["noise_sigma"],
        truth_list_len=cfg["truth_len"],
        seed=cfg["seed"],
    )
    return cfg


def _run_synth(cfg: dict) -> int:
    dataset = synth.generate(cfg["synth_config"])
    written = synth.write_dataset(dataset, cfg["out"])
    for path in written:
        print(path)
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

_TRAIN_OPTS = (
    _Opt("features", str, required=True, help="feature file (.cbvf/.cbvt)", metavar="FILE"),
    _Opt("truth", str, required=True, help="relevance list file (.rel)", metavar="FILE"),
    _Opt("candidates", str, help="candidate list file (.cand); default: ids in --truth", metavar="FILE"),
    _Opt("out", str, required=True, help="output model file (.cbvm)", metavar="FILE"),
    _Opt("dim", _parse_int, required=True, help="embedding dimension"),
    _Opt("epochs", _parse_int, 4, help="training epochs"),
    _Opt("margin", _parse_float, 1.0, help="triplet-loss margin"),
    _Opt("lr", _parse_float, 1.0, help="SGD learning rate"),
    _Opt("batch_size", _parse_int, 128, help="SGD mini-batch size"),
    _Opt("triplets_per_anchor", _parse_int, 5, help="triplets sampled per anchor per epoch"),
    _Opt("seed", _parse_int, 0, help="training seed"),
)


def _train_config(cfg: dict) -> trainer.TrainConfig:
    return trainer.TrainConfig(
        embed_dim=cfg["dim"],
        margin=cfg["margin"],
        learning_rate=cfg["lr"],
        epochs=cfg["epochs"],
        triplets_per_anchor=cfg["triplets_per_anchor"],
        batch_size=cfg["batch_size"],
        seed=cfg["seed"],
    )


def _prepare_train(cfg: dict) -> dict:
    cfg["train_config"] = _train_config(cfg)
    return cfg


def _run_train(cfg: dict) -> int:
    features = _load_pooled(cfg["features"])
    table = _load_table(cfg["truth"], cfg["candidates"])
    model = trainer.train(table, features, cfg["train_config"])
    trainer.save_model(model, cfg["out"])
    history = model.loss_history or ()
    if len(history) >= 2:
        print(
            f"wrote {cfg['out']} (dim {model.input_dim} -> {model.embed_dim}, "
            f"mean loss {history[0]:.4f} -> {history[-1]:.4f})"
        )
    else:
        print(f"wrote {cfg['out']} (dim {model.input_dim} -> {model.embed_dim}, untrained)")
    return 0


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------

_PREDICT_OPTS = (
    _Opt("features", str, required=True, help="feature file (.cbvf/.cbvt)", metavar="FILE"),
    _Opt("out", str, required=True, help="output prediction file (.pred)", metavar="FILE"),
    _Opt("model", str, help="trained model (.cbvm); omit for the raw-cosine baseline", metavar="FILE"),
    _Opt("metric", _choice(*retrieval.METRICS), retrieval.METRIC_COSINE, help="ranking similarity"),
    _Opt("k", _parse_int, 300, help="prediction list length"),
    _Opt("exclude_self", _parse_bool, True, help="drop the query from its own candidates", metavar="BOOL"),
    _Opt("queries", str, help="query id list (.cand); default: every item", metavar="FILE"),
    _Opt("candidates", str, help="candidate id list (.cand); default: every item", metavar="FILE"),
    _Opt("matrix_out", str, help="also dump the similarity matrix (.cbvs)", metavar="FILE"),
)


def _prepare_predict(cfg: dict) -> dict:
    if cfg["k"] < 1:
        raise UsageError("--k must be at least 1")
    return cfg


def _run_predict(cfg: dict) -> int:
    features = _load_pooled(cfg["features"])
    if cfg["model"] is not None:
        model = trainer.load_model(cfg["model"])
        features = trainer.embed(model, features)
    query_ids = datamodel.load_candidates(cfg["queries"]) if cfg["queries"] else features.ids
    cand_ids = datamodel.load_candidates(cfg["candidates"]) if cfg["candidates"] else features.ids
    matrix = retrieval.similarity_matrix(
        features.subset(query_ids), features.subset(cand_ids), cfg["metric"]
    )
    predictions = retrieval.top_k(matrix, cfg["k"], cfg["exclude_self"])
    datamodel.save_predictions(predictions, cfg["out"])
    print(f"wrote {cfg['out']} ({len(predictions.entries)} queries, k={cfg['k']})")
    if cfg["matrix_out"]:
        retrieval.save_similarity(matrix, cfg["matrix_out"])
        print(f"wrote {cfg['matrix_out']}")
    return 0


# ---------------------------------------------------------------------------
# fuse
# ---------------------------------------------------------------------------

_FUSE_OPTS = (
    _Opt("inputs", _parse_path_list, required=True, help="two or more .cbvs dumps, comma separated", metavar="FILES"),
    _Opt("weights", _parse_float_list, help="channel weights; default uniform", metavar="LIST"),
    _Opt("out", str, help="fused similarity dump (.cbvs)", metavar="FILE"),
    _Opt("pred", str, help="fused prediction file (.pred)", metavar="FILE"),
    _Opt("k", _parse_int, 300, help="prediction list length"),
    _Opt("exclude_self", _parse_bool, True, help="drop the query from its own candidates", metavar="BOOL"),
)


def _prepare_fuse(cfg: dict) -> dict:
    if len(cfg["inputs"]) < 2:
        raise UsageError("--inputs needs at least two .cbvs files")
    if cfg["out"] is None and cfg["pred"] is None:
        raise UsageError("nothing to write: pass --out and/or --pred")
    if cfg["k"] < 1:
        raise UsageError("--k must be at least 1")
    return cfg


def _run_fuse(cfg: dict) -> int:
    matrices = [retrieval.load_similarity(p) for p in cfg["inputs"]]
    fused = retrieval.fuse(matrices, cfg["weights"])
    if cfg["out"]:
        retrieval.save_similarity(fused, cfg["out"])
        print(f"wrote {cfg['out']}")
    if cfg["pred"]:
        predictions = retrieval.top_k(fused, cfg["k"], cfg["exclude_self"])
        datamodel.save_predictions(predictions, cfg["pred"])
        print(f"wrote {cfg['pred']} ({len(predictions.entries)} queries, k={cfg['k']})")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

_EVAL_OPTS = (
    _Opt("truth", str, required=True, help="ground-truth file (.rel)", metavar="FILE"),
    _Opt("pred", str, required=True, help="prediction file (.pred)", metavar="FILE"),
    _Opt("k_hit", _parse_int_list, metrics.DEFAULT_K_HIT, help="hit@K grid", metavar="LIST"),
    _Opt("k_recall", _parse_int_list, metrics.DEFAULT_K_RECALL, help="recall@K grid", metavar="LIST"),
    _Opt("out_prefix", str, help="write <prefix>.txt/.kv (and figure) as well", metavar="PATH"),
    _Opt("plot", _parse_bool, True, help="render <prefix>.png next to the reports", metavar="BOOL"),
)


def _prepare_eval(cfg: dict) -> dict:
    for key in ("k_hit", "k_recall"):
        if any(k < 1 for k in cfg[key]):
            raise UsageError(f"--{key.replace('_', '-')} entries must be positive")
    return cfg


def _run_eval(cfg: dict) -> int:
    truth = datamodel.load_relevance(cfg["truth"])
    predictions = datamodel.load_predictions(cfg["pred"])
    report = metrics.evaluate(truth, predictions, cfg["k_hit"], cfg["k_recall"])
    sys.stdout.write(metrics.format_report_text(report))
    if cfg["out_prefix"]:
        written = metrics.save_report(report, cfg["out_prefix"])
        if cfg["plot"]:
            from . import plots

            prefix = Path(cfg["out_prefix"])
            written.append(plots.save_eval_figure(report, prefix.with_name(prefix.name + ".png")))
        for path in written:
            print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

_SWEEP_OPTS = (
    _Opt("features", str, required=True, help="feature file (.cbvf/.cbvt)", metavar="FILE"),
    _Opt("train_truth", str, required=True, help="training relevance lists (.rel)", metavar="FILE"),
    _Opt("eval_truth", str, required=True, help="evaluation relevance lists (.rel)", metavar="FILE"),
    _Opt("candidates", str, help="candidate list file (.cand)", metavar="FILE"),
    _Opt("dims", _parse_int_list, (64, 128, 256), help="embedding dimension grid", metavar="LIST"),
    _Opt("epochs", _parse_int_list, (4, 8, 16), help="epoch grid", metavar="LIST"),
    _Opt("margin", _parse_float, 1.0, help="triplet-loss margin"),
    _Opt("lr", _parse_float, 1.0, help="SGD learning rate"),
    _Opt("batch_size", _parse_int, 128, help="SGD mini-batch size"),
    _Opt("triplets_per_anchor", _parse_int, 5, help="triplets sampled per anchor per epoch"),
    _Opt("seed", _parse_int, 0, help="training seed"),
    _Opt("metric", _choice(*retrieval.METRICS), retrieval.METRIC_COSINE, help="ranking similarity"),
    _Opt("exclude_self", _parse_bool, True, help="drop the query from its own candidates", metavar="BOOL"),
    _Opt("k_hit", _parse_int_list, metrics.DEFAULT_K_HIT, help="hit@K grid", metavar="LIST"),
    _Opt("k_recall", _parse_int_list, metrics.DEFAULT_K_RECALL, help="recall@K grid", metavar="LIST"),
    _Opt("out_dir", str, help="write sweep.txt/sweep.tsv (and figure) here", metavar="DIR"),
    _Opt("plot", _parse_bool, True, help="render sweep.png alongside the tables", metavar="BOOL"),
)


def _prepare_sweep(cfg: dict) -> dict:
    for key in ("k_hit", "k_recall"):
        if any(k < 1 for k in cfg[key]):
            raise UsageError(f"--{key.replace('_', '-')} entries must be positive")
    # validates the shared hyper-parameters once; per-cell configs reuse them
    cfg["cell_configs"] = [
        trainer.TrainConfig(
            embed_dim=dim,
            margin=cfg["margin"],
            learning_rate=cfg["lr"],
            epochs=epochs,
            triplets_per_anchor=cfg["triplets_per_anchor"],
            batch_size=cfg["batch_size"],
            seed=cfg["seed"],
        )
        for dim in cfg["dims"]
        for epochs in cfg["epochs"]
    ]
    return cfg


def format_sweep_text(
    rows: Sequence[tuple[int, int, metrics.EvalReport]],
    k_hit: Sequence[int],
    k_recall: Sequence[int],
) -> str:
    hit_heads = [f"k={k}" for k in k_hit]
    rec_heads = [f"k={k}" for k in k_recall]
    width = max(7, *(len(h) + 2 for h in hit_heads + rec_heads))
    left = f"{'dim':>5}{'epoch':>7}"
    pad = " " * len(left)

    def block(cells: Sequence[str]) -> str:
        return "".join(c.rjust(width) for c in cells)

    lines = [
        pad + " |" + "hit@k".center(width * len(hit_heads)) + " |" + "recall@k".center(width * len(rec_heads)),
        left + " |" + block(hit_heads) + " |" + block(rec_heads),
    ]
    for dim, epochs, report in rows:
        hit_vals = [f"{report.hit_at[k]:.3f}" for k in k_hit]
        rec_vals = [f"{report.recall_at[k]:.3f}" for k in k_recall]
        lines.append(f"{dim:>5}{epochs:>7} |" + block(hit_vals) + " |" + block(rec_vals))
    return "\n".join(lines) + "\n"


def format_sweep_tsv(
    rows: Sequence[tuple[int, int, metrics.EvalReport]],
    k_hit: Sequence[int],
    k_recall: Sequence[int],
) -> str:
    header = ["dim", "epoch"] + [f"hit@{k}" for k in k_hit] + [f"recall@{k}" for k in k_recall]
    lines = ["\t".join(header)]
    for dim, epochs, report in rows:
        cells = [str(dim), str(epochs)]
        cells += [repr(report.hit_at[k]) for k in k_hit]
        cells += [repr(report.recall_at[k]) for k in k_recall]
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def _run_sweep(cfg: dict) -> int:
    features = _load_pooled(cfg["features"])
    train_table = _load_table(cfg["train_truth"], cfg["candidates"])
    eval_table = _load_table(cfg["eval_truth"], cfg["candidates"])
    query_ids = list(eval_table.entries.keys())
    cand_ids = (
        datamodel.load_candidates(cfg["candidates"]) if cfg["candidates"] else features.ids
    )
    k_pred = max(max(cfg["k_hit"]), max(cfg["k_recall"]))

    rows: list[tuple[int, int, metrics.EvalReport]] = []
    for config in cfg["cell_configs"]:
        model = trainer.train(train_table, features, config)
        embedded = trainer.embed(model, features)
        matrix = retrieval.similarity_matrix(
            embedded.subset(query_ids), embedded.subset(cand_ids), cfg["metric"]
        )
        predictions = retrieval.top_k(matrix, k_pred, cfg["exclude_self"])
        report = metrics.evaluate(eval_table, predictions, cfg["k_hit"], cfg["k_recall"])
        rows.append((config.embed_dim, config.epochs, report))

    text = format_sweep_text(rows, cfg["k_hit"], cfg["k_recall"])
    sys.stdout.write(text)
    if cfg["out_dir"]:
        out = Path(cfg["out_dir"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.txt").write_text(text, encoding="utf-8")
        (out / "sweep.tsv").write_text(
            format_sweep_tsv(rows, cfg["k_hit"], cfg["k_recall"]), encoding="utf-8"
        )
        written = [out / "sweep.txt", out / "sweep.tsv"]
        if cfg["plot"]:
            from . import plots

            written.append(plots.save_sweep_figure(rows, out / "sweep.png"))
        for path in written:
            print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

_COMMANDS = {
    cmd.name: cmd
    for cmd in (
        _Command("synth", "generate a synthetic benchmark dataset", _SYNTH_OPTS, _prepare_synth, _run_synth),
        _Command("train", "train a linear triplet-loss embedding", _TRAIN_OPTS, _prepare_train, _run_train),
        _Command("predict", "rank candidates and write top-K predictions", _PREDICT_OPTS, _prepare_predict, _run_predict),
        _Command("fuse", "average similarity matrices across channels", _FUSE_OPTS, _prepare_fuse, _run_fuse),
        _Command("eval", "score predictions against ground truth", _EVAL_OPTS, _prepare_eval, _run_eval),
        _Command("sweep", "train/evaluate the full dim x epoch grid", _SWEEP_OPTS, _prepare_sweep, _run_sweep),
    )
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROG, description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for command in _COMMANDS.values():
        sp = sub.add_parser(command.name, help=command.help)
        sp.add_argument("--config", metavar="FILE", help="key=value config file (flags win)")
        for opt in command.opts:
            sp.add_argument(opt.flag, dest=opt.dest, metavar=opt.metavar, help=opt.help)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else int(exc.code)
    command = _COMMANDS[args.command]
    try:
        _apply_thread_limit()
        cfg = _resolve(command, args)
        _echo_config(command, cfg)
        cfg = command.prepare(cfg)
    except ValueError as exc:  # UsageError and config-object validation
        print(f"{PROG} {command.name}: usage error: {exc}", file=sys.stderr)
        return 2
    try:
        return command.run(cfg)
    except (ValueError, OSError) as exc:
        print(f"{PROG} {command.name}: error: {exc}", file=sys.stderr)
        return 1


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
