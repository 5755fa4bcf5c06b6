"""Command-line entry points for reproducible experiment runs.

Subcommands: ``train``, ``eval-lp``, ``eval-cluster``, ``sweep-n``,
``bench-scaling``, ``export-attention``.  Every run directory gets a
``config.snapshot`` (flat key=value) that reproduces the artifacts exactly;
checkpoints and split files carry a shared config digest so evaluation
refuses mismatched inputs.

Exit codes: 0 success, 2 I/O, 3 consistency (digest mismatch), 4 usage.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import evaluation as ev
from . import graph as gr
from . import model as md
from .seeding import rng_for

EXIT_OK = 0
EXIT_IO = 2
EXIT_CONSISTENCY = 3
EXIT_USAGE = 4

DEFAULT_FRACTIONS = [round(0.15 + 0.10 * i, 2) for i in range(9)]  # 0.15 .. 0.95

# Per-dataset defaults: dropout/neighborhood/lr/dim follow the published
# configuration; epochs, patience, and workers are this implementation's.
PRESETS: dict[str, dict] = {
    "cora": dict(dropout=0.5, neighborhood=100, lr=1e-4, dim=200,
                 directed=False, epochs=300, patience=20, workers=1),
    "cora2": dict(dropout=0.5, neighborhood=100, lr=1e-4, dim=200,
                  directed=False, epochs=300, patience=20, workers=1),
    "citeseer": dict(dropout=0.5, neighborhood=100, lr=1e-4, dim=200,
                     directed=False, epochs=300, patience=20, workers=1),
    "pubmed": dict(dropout=0.5, neighborhood=100, lr=1e-4, dim=200,
                   directed=False, epochs=120, patience=10, workers=16),
    "email": dict(dropout=0.8, neighborhood=100, lr=1e-4, dim=200,
                  directed=True, epochs=120, patience=10, workers=16),
    "zhihu": dict(dropout=0.65, neighborhood=250, lr=1e-4, dim=200,
                  directed=True, epochs=60, patience=5, workers=32),
}


class UsageError(ValueError):
    """Bad flags or command usage (exit 4)."""


class ConsistencyError(RuntimeError):
    """Artifacts from different configurations were mixed (exit 3)."""


@dataclass
class ExperimentConfig:
    """Full description of one experiment run; round-trips via key=value."""

    data: str = ""
    labels: str | None = None
    fractions: list[float] = field(default_factory=lambda: list(DEFAULT_FRACTIONS))
    directed: bool = False
    trials: int = 4
    cluster_mode: str = "averaged-context"
    k: int = 42
    out: str = "runs/exp"
    train: md.TrainConfig = field(default_factory=md.TrainConfig)

    def validate(self) -> None:
        if not self.data:
            raise UsageError("--data is required")
        for f in self.fractions:
            if not 0 < f <= 1:
                raise UsageError(f"fraction {f} outside (0, 1]")
        if self.trials < 1:
            raise UsageError("--trials must be >= 1")
        if self.cluster_mode not in ("global", "averaged-context"):
            raise UsageError("--cluster-mode must be global or averaged-context")
        if self.k < 1:
            raise UsageError("--k must be >= 1")
        try:
            self.train.validate()
        except gr.ValidationError as exc:
            raise UsageError(str(exc)) from None


_SNAPSHOT_KEYS = [
    "data", "labels", "fractions", "directed", "trials", "cluster_mode", "k",
    "out", "dim", "neighborhood", "lr", "dropout", "negatives", "epochs",
    "seed", "variant", "negative_mode", "resample", "workers", "sync",
    "patience",
]


def config_to_pairs(cfg: ExperimentConfig) -> dict[str, str]:
    t = cfg.train
    return {
        "data": cfg.data,
        "labels": cfg.labels or "",
        "fractions": ",".join(repr(f) for f in cfg.fractions),
        "directed": "true" if cfg.directed else "false",
        "trials": str(cfg.trials),
        "cluster_mode": cfg.cluster_mode,
        "k": str(cfg.k),
        "out": cfg.out,
        "dim": str(t.dim),
        "neighborhood": str(t.neighborhood),
        "lr": repr(t.learning_rate),
        "dropout": repr(t.dropout),
        "negatives": str(t.negatives_per_edge),
        "epochs": str(t.epochs),
        "seed": str(t.seed),
        "variant": t.variant,
        "negative_mode": t.negative_mode,
        "resample": t.resample,
        "workers": str(t.workers),
        "sync": "true" if t.sync else "false",
        "patience": str(t.patience),
    }


def config_from_pairs(pairs: dict[str, str]) -> ExperimentConfig:
    def boolean(v: str) -> bool:
        if v.lower() in ("true", "1", "yes"):
            return True
        if v.lower() in ("false", "0", "no"):
            return False
        raise UsageError(f"expected a boolean, got {v!r}")

    cfg = ExperimentConfig()
    t = cfg.train
    for key, v in pairs.items():
        if key == "data":
            cfg.data = v
        elif key == "labels":
            cfg.labels = v or None
        elif key == "fractions":
            cfg.fractions = [float(x) for x in v.split(",") if x]
        elif key == "directed":
            cfg.directed = boolean(v)
        elif key == "trials":
            cfg.trials = int(v)
        elif key == "cluster_mode":
            cfg.cluster_mode = v
        elif key == "k":
            cfg.k = int(v)
        elif key == "out":
            cfg.out = v
        elif key == "dim":
            t.dim = int(v)
        elif key == "neighborhood":
            t.neighborhood = int(v)
        elif key == "lr":
            t.learning_rate = float(v)
        elif key == "dropout":
            t.dropout = float(v)
        elif key == "negatives":
            t.negatives_per_edge = int(v)
        elif key == "epochs":
            t.epochs = int(v)
        elif key == "seed":
            t.seed = int(v)
        elif key == "variant":
            t.variant = v
        elif key == "negative_mode":
            t.negative_mode = v
        elif key == "resample":
            t.resample = v
        elif key == "workers":
            t.workers = int(v)
        elif key == "sync":
            t.sync = boolean(v)
        elif key == "patience":
            t.patience = int(v)
        else:
            raise UsageError(f"unknown config key {key!r}")
    return cfg


def write_snapshot(cfg: ExperimentConfig, path: Path) -> None:
    pairs = config_to_pairs(cfg)
    lines = [f"{k}={pairs[k]}\n" for k in _SNAPSHOT_KEYS]
    path.write_text("".join(lines), encoding="utf-8")


def read_snapshot(path: Path) -> ExperimentConfig:
    pairs: dict[str, str] = {}
    for line_no, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}: line {line_no}: expected key=value")
        key, _, v = line.partition("=")
        pairs[key.strip()] = v.strip()
    return config_from_pairs(pairs)


def _data_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_digest(cfg: ExperimentConfig, fraction: float, data_hash: str) -> str:
    """Digest binding a (dataset, fraction, training config) triple."""
    payload = {
        "data_sha256": data_hash,
        "directed": cfg.directed,
        "fraction": round(fraction, 6),
        "train": cfg.train.to_dict(),
    }
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode("utf-8")
    ).hexdigest()


def _frac_key(fraction: float) -> int:
    return int(round(fraction * 10000))


def _frac_dir(out: Path, fraction: float) -> Path:
    return out / f"frac_{fraction:g}"


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def load_dataset(cfg: ExperimentConfig) -> gr.Graph:
    path = Path(cfg.data)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    g = gr.parse_edge_list(path, directed=cfg.directed)
    if g.self_loops_dropped:
        _warn(f"dropped {g.self_loops_dropped} self-loop(s) from {path}")
    return g


# ---------------------------------------------------------------- commands


def cmd_train(cfg: ExperimentConfig) -> None:
    """Split, train, and checkpoint once per configured fraction."""
    cfg.validate()
    g = load_dataset(cfg)
    data_hash = _data_sha256(cfg.data)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_snapshot(cfg, out / "config.snapshot")
    gr.write_mapping(g, out / "mapping.tsv")

    for fraction in cfg.fractions:
        fdir = _frac_dir(out, fraction)
        fdir.mkdir(parents=True, exist_ok=True)
        digest = config_digest(cfg, fraction, data_hash)
        split = gr.split_edges(g, fraction, rng_for(cfg.train.seed, "split", _frac_key(fraction)))
        gr.export_split(split, fdir)
        meta = {
            "digest": digest,
            "fraction": fraction,
            "n": g.n,
            "m": g.m,
            "train_edges": int(split.train_edges.shape[0]),
            "test_edges": int(split.test_pos.shape[0]),
            "stranded": int(split.stranded.shape[0]),
        }
        (fdir / "meta.json").write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

        train_edges, train_weights = split.train_edges, split.train_weights
        val_edges = None
        if cfg.train.patience > 0 and train_edges.shape[0] >= 5:
            # Hold out 20% of the training edges to drive early stopping.
            vrng = rng_for(cfg.train.seed, "validation", _frac_key(fraction))
            perm = vrng.permutation(train_edges.shape[0])
            n_val = max(1, int(round(0.2 * train_edges.shape[0])))
            val_edges = train_edges[perm[:n_val]]
            keep = np.sort(perm[n_val:])
            train_edges, train_weights = train_edges[keep], train_weights[keep]

        g_loss = gr.from_edges(g.n, train_edges, train_weights,
                               directed=g.directed, node_labels=g.node_labels)
        result = md.train(g_loss, cfg.train, val_edges=val_edges)
        md.save_checkpoint(
            fdir / "checkpoint.bin", result.embedding, cfg.train, digest,
            extra={
                "fraction": fraction,
                "epochs_run": result.epochs_run,
                "best_epoch": result.best_epoch,
                "variant": cfg.train.variant,
            },
        )
        with open(fdir / "loss.tsv", "w", encoding="utf-8") as fh:
            fh.write("epoch\tmean_loss\n")
            for i, loss in enumerate(result.loss_trace):
                fh.write(f"{i}\t{loss!r}\n")
        print(f"trained fraction={fraction:g} epochs={result.epochs_run} "
              f"final_loss={result.loss_trace[-1]:.6f} -> {fdir}")


def _load_fraction_artifacts(cfg: ExperimentConfig, g: gr.Graph, fraction: float):
    """Split + checkpoint for one fraction, with digest verification."""
    fdir = _frac_dir(Path(cfg.out), fraction)
    meta_path = fdir / "meta.json"
    ckpt_path = fdir / "checkpoint.bin"
    if not meta_path.exists() or not ckpt_path.exists():
        raise FileNotFoundError(f"missing split or checkpoint under {fdir}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    emb, ckpt_meta = md.load_checkpoint(ckpt_path)
    expected = config_digest(cfg, fraction, _data_sha256(cfg.data))
    if meta["digest"] != expected or ckpt_meta["digest"] != expected:
        raise ConsistencyError(
            f"config digest mismatch for fraction {fraction:g}; "
            f"refuse to evaluate a checkpoint against a foreign split"
        )
    split = gr.load_split(fdir, g, fraction)
    return split, emb, ckpt_meta


def _metrics_header(fh) -> None:
    fh.write("dataset\tfraction\tvariant\tauc\tap\tnmi\tami\tseed\n")


def _metrics_row(cfg: ExperimentConfig, fraction: float,
                 auc_v=None, ap_v=None, nmi_v=None, ami_v=None) -> str:
    fmt = lambda x: "NA" if x is None else f"{x:.6f}"
    dataset = Path(cfg.data).stem
    return (f"{dataset}\t{fraction:g}\t{cfg.train.variant}\t"
            f"{fmt(auc_v)}\t{fmt(ap_v)}\t{fmt(nmi_v)}\t{fmt(ami_v)}\t{cfg.train.seed}\n")


def cmd_eval_lp(cfg: ExperimentConfig) -> list[tuple[float, float, float]]:
    """AUC/AP per fraction on the held-out edges; appends to metrics_lp.tsv."""
    cfg.validate()
    g = load_dataset(cfg)
    rows = []
    out = Path(cfg.out)
    with open(out / "metrics_lp.tsv", "w", encoding="utf-8") as fh:
        _metrics_header(fh)
        for fraction in cfg.fractions:
            split, emb, _ = _load_fraction_artifacts(cfg, g, fraction)
            if split.test_pos.shape[0] == 0:
                raise UsageError(
                    f"fraction {fraction:g} held out no edges; nothing to evaluate"
                )
            g_eval = gr.build_train_graph(g, split)
            rng = rng_for(cfg.train.seed, "eval", _frac_key(fraction))
            pos = md.score_pairs(emb, g_eval, split.test_pos, cfg.train.neighborhood,
                                 trials=cfg.trials, rng=rng, variant=cfg.train.variant)
            neg = md.score_pairs(emb, g_eval, split.test_neg, cfg.train.neighborhood,
                                 trials=cfg.trials, rng=rng, variant=cfg.train.variant)
            ranked = ev.RankedScores(pos=pos, neg=neg)
            auc_v, ap_v = ev.auc(ranked), ev.average_precision(ranked)
            row = _metrics_row(cfg, fraction, auc_v=auc_v, ap_v=ap_v)
            fh.write(row)
            sys.stdout.write(row)
            rows.append((fraction, auc_v, ap_v))
    return rows


def cmd_eval_cluster(cfg: ExperimentConfig) -> list[tuple[float, float, float]]:
    """k-Means NMI/AMI against ground-truth communities, per fraction."""
    cfg.validate()
    if not cfg.labels:
        raise UsageError("--labels is required for eval-cluster")
    if not Path(cfg.labels).exists():
        raise FileNotFoundError(f"labels file not found: {cfg.labels}")
    g = load_dataset(cfg)
    label_map = gr.parse_labels(cfg.labels)
    tok2id = g.label_to_id()
    unknown = [tok for tok in label_map if tok not in tok2id]
    if unknown:
        _warn(f"{len(unknown)} labeled node(s) absent from the graph; excluded")
    labeled_ids = np.array(
        [tok2id[tok] for tok in label_map if tok in tok2id], dtype=np.int64
    )
    communities = np.array(
        [label_map[tok] for tok in label_map if tok in tok2id]
    )
    if labeled_ids.shape[0] == 0:
        raise UsageError("no labeled nodes overlap the graph")

    rows = []
    out = Path(cfg.out)
    with open(out / "metrics_cluster.tsv", "w", encoding="utf-8") as fh:
        _metrics_header(fh)
        for fraction in cfg.fractions:
            split, emb, _ = _load_fraction_artifacts(cfg, g, fraction)
            g_eval = gr.build_train_graph(g, split)
            rng = rng_for(cfg.train.seed, "eval", _frac_key(fraction), 1)
            feats = ev.node_features_for_clustering(
                emb, g_eval, mode=cfg.cluster_mode,
                size=cfg.train.neighborhood, rng=rng,
            )
            result = ev.kmeans(feats, cfg.k, restarts=10, max_iter=300, rng=rng)
            yhat = result.assignments[labeled_ids]
            nmi_v = ev.nmi(communities, yhat)
            ami_v = ev.ami(communities, yhat)
            row = _metrics_row(cfg, fraction, nmi_v=nmi_v, ami_v=ami_v)
            fh.write(row)
            sys.stdout.write(row)
            rows.append((fraction, nmi_v, ami_v))
    return rows


def cmd_sweep_n(cfg: ExperimentConfig, values: list[int]) -> list[tuple[int, float, float]]:
    """Train and evaluate once per neighborhood size on the first fraction."""
    cfg.validate()
    if not values:
        raise UsageError("--values must list at least one neighborhood size")
    deduped: list[int] = []
    for v in values:
        if v in deduped:
            _warn(f"duplicate neighborhood size {v} ignored")
        else:
            deduped.append(v)
    fraction = cfg.fractions[0]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_snapshot(cfg, out / "config.snapshot")
    rows = []
    for size in deduped:
        sub = ExperimentConfig(
            data=cfg.data, labels=cfg.labels, fractions=[fraction],
            directed=cfg.directed, trials=cfg.trials,
            cluster_mode=cfg.cluster_mode, k=cfg.k,
            out=str(out / f"sweep_N{size}"),
            train=replace(cfg.train, neighborhood=size),
        )
        cmd_train(sub)
        (_, auc_v, ap_v), = cmd_eval_lp(sub)
        rows.append((size, auc_v, ap_v))
    with open(out / "sweep_n.tsv", "w", encoding="utf-8") as fh:
        fh.write("dataset\tfraction\tvariant\tneighborhood\tauc\tap\tseed\n")
        for size, auc_v, ap_v in rows:
            fh.write(f"{Path(cfg.data).stem}\t{fraction:g}\t{cfg.train.variant}\t"
                     f"{size}\t{auc_v:.6f}\t{ap_v:.6f}\t{cfg.train.seed}\n")
    spread = max(r[1] for r in rows) - min(r[1] for r in rows)
    print(f"sweep spread: max-min AUC = {spread:.6f} over N={deduped}")
    return rows


BENCH_TRAIN = md.TrainConfig(
    dim=64, neighborhood=16, learning_rate=1e-4, dropout=0.0,
    negatives_per_edge=2, epochs=1, workers=64,
)
BENCH_ATTACH = 5  # edges per new node in generated benchmark graphs


def cmd_bench_scaling(cfg: ExperimentConfig, sizes: list[int]) -> list[tuple[int, float]]:
    """Time one training epoch on generated graphs of increasing edge count."""
    if not sizes:
        raise UsageError("--sizes must list at least one edge count")
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise UsageError("--sizes must be strictly ascending")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, m in enumerate(sizes):
        n = m // BENCH_ATTACH + BENCH_ATTACH
        g = gr.barabasi_albert(n, BENCH_ATTACH, rng_for(cfg.train.seed, "generate", i))
        bench = replace(BENCH_TRAIN, seed=cfg.train.seed)
        t0 = time.perf_counter()
        md.train(g, bench)
        dt = time.perf_counter() - t0
        rows.append((g.m, dt))
        print(f"m={g.m} seconds={dt:.3f}")
    with open(out / "scaling.tsv", "w", encoding="utf-8") as fh:
        fh.write("m\tseconds\n")
        for m, dt in rows:
            fh.write(f"{m}\t{dt:.6f}\n")
    if len(rows) >= 2:
        ms = np.array([r[0] for r in rows], dtype=np.float64)
        ts = np.array([r[1] for r in rows], dtype=np.float64)
        slope, intercept = np.polyfit(ms, ts, 1)
        resid = ts - (slope * ms + intercept)
        ss_tot = float(((ts - ts.mean()) ** 2).sum())
        r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
        print(f"fit: seconds = {slope:.3e}*m + {intercept:.3e}, r2={r2:.4f}")
    return rows


def cmd_export_attention(cfg: ExperimentConfig, checkpoint: str, pairs_file: str,
                         report_path: str | None) -> list[dict]:
    """Write the attention report for the node pairs listed in a file."""
    ckpt = Path(checkpoint)
    if not ckpt.exists():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    if not Path(pairs_file).exists():
        raise FileNotFoundError(f"pairs file not found: {pairs_file}")
    g = load_dataset(cfg)
    emb, meta = md.load_checkpoint(ckpt)
    if emb.n != g.n:
        raise ConsistencyError(
            f"checkpoint has {emb.n} nodes but dataset has {g.n}"
        )
    size = int(meta.get("config", {}).get("neighborhood", cfg.train.neighborhood))
    tok2id = g.label_to_id()
    pairs = []
    skipped = 0
    for line_no, raw in enumerate(
        Path(pairs_file).read_text(encoding="utf-8").splitlines(), 1
    ):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise gr.ParseError("expected 's t'", line_no)
        if parts[0] not in tok2id or parts[1] not in tok2id:
            _warn(f"line {line_no}: unknown node id; skipped")
            skipped += 1
            continue
        s, t = tok2id[parts[0]], tok2id[parts[1]]
        if g.degree(s) == 0 or g.degree(t) == 0:
            _warn(f"line {line_no}: isolated endpoint; skipped")
            skipped += 1
            continue
        pairs.append((s, t))
    report = ev.export_attention(
        emb, g, pairs, size=size, rng=rng_for(cfg.train.seed, "eval", 0, 2)
    )
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if report_path:
        Path(report_path).parent.mkdir(parents=True, exist_ok=True)
        Path(report_path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if skipped:
        _warn(f"{skipped} pair(s) skipped")
    return report


# ----------------------------------------------------------------- parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); usage errors are 4
        raise UsageError(message)


def _add_common(p: _Parser) -> None:
    p.add_argument("--data", help="edge list file (u v [w] per line)")
    p.add_argument("--labels", help="ground-truth communities file")
    p.add_argument("--fractions", help="comma-separated training fractions")
    p.add_argument("--dim", type=int, help="embedding dimension")
    p.add_argument("--neighborhood", type=int, help="neighborhood sample size")
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--dropout", type=float, help="message dropout rate in [0,1)")
    p.add_argument("--negatives", type=int, help="negative samples per edge")
    p.add_argument("--epochs", type=int, help="max training epochs")
    p.add_argument("--variant", choices=("goat", "global"),
                   help="full attention model or the global-embedding ablation")
    p.add_argument("--seed", type=int, help="root random seed")
    p.add_argument("--workers", type=int, help="edges per synchronous round")
    p.add_argument("--out", help="output directory")
    p.add_argument("--cluster-mode", choices=("global", "averaged-context"),
                   dest="cluster_mode", help="features fed to k-Means")
    p.add_argument("--k", type=int, help="cluster count for k-Means")
    p.add_argument("--trials", type=int, help="neighborhood resamples per scored pair")
    p.add_argument("--directed", action=argparse.BooleanOptionalAction, default=None,
                   help="treat the edge list as directed")
    p.add_argument("--sync", action=argparse.BooleanOptionalAction, default=None,
                   help="synchronous (deterministic) training rounds")
    p.add_argument("--patience", type=int, help="early-stopping patience (0 = off)")
    p.add_argument("--negative-mode", choices=("context", "global"),
                   dest="negative_mode", help="negatives as attention blocks or raw rows")
    p.add_argument("--resample", choices=("epoch", "fixed"),
                   help="redraw neighborhoods per epoch or fix them once")
    p.add_argument("--preset", choices=sorted(PRESETS),
                   help="built-in per-dataset defaults")
    p.add_argument("--config", help="key=value config file (flags override it)")


def build_parser() -> _Parser:
    parser = _Parser(prog="ctxembed", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in (
        ("train", "split the dataset, train, and write checkpoints"),
        ("eval-lp", "link-prediction AUC/AP on held-out edges"),
        ("eval-cluster", "k-Means clustering scored by NMI/AMI"),
        ("sweep-n", "train/evaluate across neighborhood sizes"),
        ("bench-scaling", "time one epoch on generated graphs"),
        ("export-attention", "dump attention weights for node pairs"),
    ):
        p = sub.add_parser(name, help=doc)
        _add_common(p)
        if name == "sweep-n":
            p.add_argument("--values", help="comma-separated neighborhood sizes")
        if name == "bench-scaling":
            p.add_argument("--sizes", help="comma-separated edge counts, ascending")
        if name == "export-attention":
            p.add_argument("--checkpoint", help="checkpoint .bin file")
            p.add_argument("--pairs", help="file with one 's t' pair per line")
            p.add_argument("--report", help="output JSON path (default: stdout)")
    return parser


_FLAG_TO_KEY = {
    "data": "data", "labels": "labels", "fractions": "fractions",
    "dim": "dim", "neighborhood": "neighborhood", "lr": "lr",
    "dropout": "dropout", "negatives": "negatives", "epochs": "epochs",
    "variant": "variant", "seed": "seed", "workers": "workers", "out": "out",
    "cluster_mode": "cluster_mode", "k": "k", "trials": "trials",
    "directed": "directed", "sync": "sync", "patience": "patience",
    "negative_mode": "negative_mode", "resample": "resample",
}


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """defaults < preset < config file < explicit flags."""
    pairs: dict[str, str] = {}
    preset = getattr(args, "preset", None)
    if preset:
        for key, v in PRESETS[preset].items():
            pairs[key] = str(v).lower() if isinstance(v, bool) else repr(v) if isinstance(v, float) else str(v)
    cfg_file = getattr(args, "config", None)
    if cfg_file:
        if not Path(cfg_file).exists():
            raise FileNotFoundError(f"config file not found: {cfg_file}")
        for line_no, raw in enumerate(
            Path(cfg_file).read_text(encoding="utf-8").splitlines(), 1
        ):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{cfg_file}: line {line_no}: expected key=value")
            key, _, v = line.partition("=")
            pairs[key.strip()] = v.strip()
    for flag, key in _FLAG_TO_KEY.items():
        v = getattr(args, flag, None)
        if v is not None:
            if isinstance(v, bool):
                pairs[key] = "true" if v else "false"
            elif isinstance(v, float):
                pairs[key] = repr(v)
            else:
                pairs[key] = str(v)
    return config_from_pairs(pairs)


def _int_list(text: str | None, flag: str) -> list[int]:
    if not text:
        return []
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"{flag} expects comma-separated integers") from None


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args)
        if args.command == "train":
            cmd_train(cfg)
        elif args.command == "eval-lp":
            cmd_eval_lp(cfg)
        elif args.command == "eval-cluster":
            cmd_eval_cluster(cfg)
        elif args.command == "sweep-n":
            cmd_sweep_n(cfg, _int_list(args.values, "--values"))
        elif args.command == "bench-scaling":
            cmd_bench_scaling(cfg, _int_list(args.sizes, "--sizes"))
        elif args.command == "export-attention":
            if not args.checkpoint or not args.pairs:
                raise UsageError("--checkpoint and --pairs are required")
            cmd_export_attention(cfg, args.checkpoint, args.pairs, args.report)
        else:  # pragma: no cover
            raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConsistencyError as exc:
        print(f"consistency error: {exc}", file=sys.stderr)
        return EXIT_CONSISTENCY
    except gr.ParseError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO
    except gr.ValidationError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FileNotFoundError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
