"""Command-line entry point.

    transportlab simulate  --config run.ini
    transportlab transport --config run.ini [--set bart.n_trees=50 ...]
    transportlab cv        --config run.ini
    transportlab weights   --config run.ini
    transportlab outliers  --config run.ini --input predictions.csv
    transportlab tree      --config run.ini --labels predictions.csv

Every text artifact starts with a comment carrying the config hash and seed
(JSON files carry them as keys), so runs with equal hashes can be compared
byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__, bart
from .config import ConfigError, RunConfig, load_config
from .data import ColumnSchema, Dataset, concat, design_matrix, impute, load_csv, write_csv
from .evaluation import BartModel, ForestModel, auc, compare_models, compare_transport, metrics
from .interpret import below_grand_mean, detect_outliers, fit_ctree, leaf_report, leaf_report_csv
from .overlap import fit_overlap
from .synth import generate, mask_target
from .weights import make_weights, overlap_report, unit_weights

REPORT_SCHEMA = 1


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {cause}")


@contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def _fmt(v) -> str:
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else repr(float(v))


class Run:
    """Shared state of one command invocation."""

    def __init__(self, cmd: str, cfg: RunConfig, seed: int | None = None):
        self.cmd = cmd
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else seed
        self.hash = cfg.hash()
        self.out = cfg.output_dir
        self.out.mkdir(parents=True, exist_ok=True)
        self.written: list[str] = []

    @property
    def header(self) -> str:
        return f"transportlab {self.cmd} config_hash={self.hash} seed={self.seed}"

    def write_text(self, name: str, text: str) -> None:
        (self.out / name).write_text(text, encoding="utf-8", newline="")
        self.written.append(name)

    def write_rows(self, name: str, header: list[str], rows) -> None:
        buf = io.StringIO()
        buf.write(f"# {self.header}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        self.write_text(name, buf.getvalue())

    def write_json(self, name: str, obj: dict) -> None:
        obj = {"schema": REPORT_SCHEMA, "command": self.cmd, "config_hash": self.hash, "seed": self.seed, **obj}
        self.write_text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------------ data


def _header_of(path: Path) -> list[str]:
    with path.open(newline="", encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                return next(csv.reader([line]))
    return []


def _schema(cfg: RunConfig, path: Path) -> tuple[ColumnSchema, ...]:
    declared = cfg.schema()
    if declared is not None:
        return declared
    d = cfg.raw["data"]
    skip = {d["outcome"], d["membership"], d["id"]}
    cols = [h.strip() for h in _header_of(path) if h.strip() not in skip]
    if not cols:
        raise ConfigError(f"{path}: no covariate columns found")
    return tuple(ColumnSchema(c) for c in cols)


def load_data(cfg: RunConfig) -> Dataset:
    """All rows, source and target, with covariates imputed."""
    d = cfg.raw["data"]
    with stage("load"):
        path, src, tgt = cfg.path("path"), cfg.path("source"), cfg.path("target")
        id_col = d["id"] or None
        if path is not None:
            if src or tgt:
                raise ConfigError("[data] give either path or source/target, not both")
            data = load_csv(path, _schema(cfg, path), d["outcome"], d["membership"], id_col)
        elif src is not None and tgt is not None:
            schema = _schema(cfg, src)
            s = load_csv(src, schema, d["outcome"], None, id_col)
            t_has_y = d["outcome"] in [h.strip() for h in _header_of(tgt)]
            t = load_csv(tgt, schema, d["outcome"] if t_has_y else None, None, id_col)
            t = Dataset(t.schema, t.rows, np.zeros(t.n, np.int8), t.row_ids,
                        t.outcome if t_has_y else np.full(t.n, np.nan), d["outcome"])
            data = concat([s, t])
        else:
            raise ConfigError("[data] needs path, or both source and target")
    with stage("impute"):
        return impute(data, d["impute"])


def split(data: Dataset) -> tuple[Dataset, Dataset]:
    """(labeled source, target); the target keeps whatever outcomes it has."""
    with stage("split"):
        src = data.membership == 1
        if not src.any():
            raise ValueError("empty source")
        if src.all():
            raise ValueError("empty target")
        source, target = data.take(src), data.take(~src)
        source.labeled_outcome()
        if target.outcome is not None and np.isnan(target.outcome).any():
            target = target.take(np.arange(target.n), drop_outcome=True)
        return source, target


def _overlap_and_weights(run: Run, source: Dataset, target: Dataset):
    cfg = run.cfg
    Xs, names = design_matrix(source)
    Xt, _ = design_matrix(target)
    with stage("overlap"):
        ov = fit_overlap(Xs, Xt, names, cfg.get("overlap", "covariates"), source.labeled_outcome(), **cfg.logistic_opts())
        ss, st = ov.scores(Xs), ov.scores(Xt)
    with stage("weights"):
        mode = cfg.raw["weights"]["mode"]
        if mode == "weighted":
            bw = make_weights(ss, cfg.get("weights", "clip"))
            fit_w = bw.final
        elif mode in ("unit", "unweighted"):
            bw = unit_weights(source.n)
            fit_w = bw.final if mode == "unit" else None
        else:
            raise ConfigError(f"[weights] mode must be weighted, unweighted or unit, got {mode!r}")
        rep = overlap_report(ss, st, target_ids=target.row_ids, weights=bw.final, floor=cfg.get("overlap", "floor"))
    s_all = np.r_[np.ones(source.n), np.zeros(target.n)]
    info = {
        "overlap": {
            "covariates": str(cfg.get("overlap", "covariates")),
            "columns": ov.column_names,
            "coefficients": dict(zip(["(intercept)"] + ov.column_names, ov.model.coefficients.tolist())),
            "converged": ov.model.converged,
            "iterations": ov.model.iterations,
            "auc": auc(np.r_[ss, st], s_all),
            **rep.to_dict(),
        },
        "weights": {
            "mode": mode,
            "clip": str(bw.clip_rule),
            "cap": bw.cap,
            "ess": bw.ess,
            "n_source": source.n,
            "min": float(bw.final.min()),
            "max": float(bw.final.max()),
        },
        "ess": bw.ess,
        "positivity_violations": rep.positivity_violations,
    }
    rows = [[source.row_ids[i], 1, _fmt(ss[i]), _fmt(bw.raw[i]), _fmt(bw.final[i])] for i in range(source.n)]
    rows += [[target.row_ids[i], 0, _fmt(st[i]), "", ""] for i in range(target.n)]
    run.write_rows("weights.csv", ["row_id", "S", "overlap_score", "raw_weight", "weight"], rows)
    return Xs, Xt, fit_w, info


def _ctree_inputs(d: Dataset):
    cat = [c.is_categorical for c in d.schema]
    cats = {j: c.categories for j, c in enumerate(d.schema) if c.is_categorical}
    return np.asarray(d.rows), cat, d.names, cats


def _fit_and_write_tree(run: Run, d: Dataset, label: np.ndarray) -> dict:
    cfg = run.cfg
    alpha, min_node, max_depth = (cfg.get("ctree", k) for k in ("alpha", "min_node", "max_depth"))
    if label.min() == label.max():
        note = f"ctree skipped: label has a single class (all {int(label[0])})"
    elif d.n < 2 * min_node:
        note = f"ctree skipped: {d.n} rows is fewer than 2 * min_node = {2 * min_node}"
    else:
        note = None
    if note:
        run.write_text("ctree.txt", f"# {run.header}\n{note}\n")
        return {"skipped": note}
    with stage("ctree"):
        X, cat, names, cats = _ctree_inputs(d)
        t = fit_ctree(X, label, alpha, min_node, max_depth, cat, names, cats)
        leaves = leaf_report(t)
    run.write_text("ctree.txt", f"# {run.header}\n{t.to_text()}")
    run.write_text("ctree.dot", f"// {run.header}\n{t.to_dot()}")
    run.write_text("leaves.csv", leaf_report_csv(leaves, run.header))
    return {
        "alpha": alpha,
        "n_leaves": len(leaves),
        "depth": t.depth(),
        "root_split": None if t.root.is_leaf else names[t.root.column],
    }


def _mad_flags(x, rule):
    try:
        return detect_outliers(x, rule), None
    except ValueError as exc:
        return None, str(exc)


# -------------------------------------------------------------- commands


def cmd_simulate(cfg: RunConfig) -> Run:
    spec = cfg.shift_spec()
    run = Run("simulate", cfg, seed=spec.seed)
    with stage("simulate"):
        d = generate(spec)
    src, tgt = d.take(d.membership == 1), d.take(d.membership == 0)
    for name, part in (("source.csv", src), ("target.csv", tgt), ("merged.csv", mask_target(d))):
        write_csv(part, run.out / name, comment=run.header)
        run.written.append(name)
    return run


def cmd_transport(cfg: RunConfig) -> Run:
    run = Run("transport", cfg)
    data = load_data(cfg)
    source, target = split(data)
    Xs, Xt, fit_w, info = _overlap_and_weights(run, source, target)
    level = cfg.get("bart", "level")
    with stage("bart"):
        post = bart.fit(Xs, source.labeled_outcome(), fit_w, cfg.bart_config(), run.seed)
        bart.save(post, run.out / "model.bartpost")
        run.written.append("model.bartpost")
    with stage("predict"):
        draws = post.draw_matrix(Xt)
        summ = bart.summarize_draws(draws, level)
        below = below_grand_mean(draws, level)
    with stage("outliers"):
        sd_flags = detect_outliers(summ.post_mean, cfg.outlier_rule("sd"))
        mad_flags, mad_note = _mad_flags(summ.post_mean, cfg.outlier_rule("mad"))
        label_kind = cfg.raw["ctree"]["label"]
        if label_kind not in ("sd", "mad"):
            raise ConfigError(f"[ctree] label must be sd or mad, got {label_kind!r}")
        flags = sd_flags if label_kind == "sd" else mad_flags
        if flags is None:
            raise ValueError(f"low-score label needs the mad rule: {mad_note}")
        low = flags.astype(np.int64)
    rows = [
        [
            target.row_ids[i],
            _fmt(summ.post_mean[i]),
            _fmt(summ.post_sd[i]),
            _fmt(summ.ci_low[i]),
            _fmt(summ.ci_high[i]),
            int(sd_flags[i]),
            "" if mad_flags is None else int(mad_flags[i]),
            int(low[i]),
            int(below[i]),
        ]
        for i in range(target.n)
    ]
    run.write_rows(
        "predictions.csv",
        ["row_id", "post_mean", "post_sd", "ci_low", "ci_high", "outlier_sd", "outlier_mad", "low_flag", "ci_below_grand_mean"],
        rows,
    )
    tree_info = _fit_and_write_tree(run, target, low)
    report = {
        **info,
        "n_source": source.n,
        "n_target": target.n,
        "bart": {
            "config": post.config.to_dict(),
            "n_draws": post.n_draws,
            "level": level,
            "lambda": post.lam,
            "sigma_mean": float(post.sigma.mean()),
            "accept": post.accept,
        },
        "outliers": {
            "sd_flagged": int(sd_flags.sum()),
            "mad_flagged": None if mad_flags is None else int(mad_flags.sum()),
            "mad_note": mad_note,
            "label_rule": label_kind,
            "ci_below_grand_mean": int(below.sum()),
        },
        "ctree": tree_info,
    }
    if target.outcome is not None:
        report["target_metrics"] = metrics(target.outcome, summ.post_mean).to_dict()
    run.write_json("report.json", report)
    return run


def cmd_weights(cfg: RunConfig) -> Run:
    run = Run("weights", cfg)
    source, target = split(load_data(cfg))
    _, _, _, info = _overlap_and_weights(run, source, target)
    run.write_json("report.json", {**info, "n_source": source.n, "n_target": target.n})
    return run


def cmd_cv(cfg: RunConfig) -> Run:
    run = Run("cv", cfg)
    source, target = split(load_data(cfg))
    k = cfg.get("eval", "k")
    mode = cfg.raw["eval"]["mode"]
    with stage("cv"):
        if mode == "transport":
            table = compare_transport(
                source, target, k, run.seed, cfg.get("weights", "clip"), cfg.bart_config(),
                cfg.get("eval", "settings"), cfg.get("overlap", "covariates"), cfg.logistic_opts(),
            )
        elif mode == "models":
            models = [BartModel(cfg.bart_config(), run.seed), ForestModel(cfg.forest_config())]
            table = compare_models(source, models, k, run.seed)
        else:
            raise ConfigError(f"[eval] mode must be transport or models, got {mode!r}")
    run.write_text("comparison.csv", table.to_csv(run.header))
    run.write_json("folds.json", {"mode": mode, **table.to_dict()})
    return run


def _read_columns(path: Path) -> dict[str, list[str]]:
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(ln for ln in fh if not ln.startswith("#")))
    if not rows:
        raise ValueError(f"{path}: empty file")
    head = rows[0]
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != len(head):
            raise ValueError(f"{path}: data row {i}: expected {len(head)} fields, got {len(r)}")
    return {h: [r[j] for r in rows[1:]] for j, h in enumerate(head)}


def cmd_outliers(cfg: RunConfig, input_path: Path, column: str) -> Run:
    run = Run("outliers", cfg)
    with stage("load"):
        cols = _read_columns(input_path)
        if column not in cols or "row_id" not in cols:
            raise ValueError(f"{input_path}: need columns row_id and {column}")
        x = np.array([float(v) for v in cols[column]])
    with stage("outliers"):
        sd = detect_outliers(x, cfg.outlier_rule("sd"))
        mad, note = _mad_flags(x, cfg.outlier_rule("mad"))
    rows = [[rid, _fmt(x[i]), int(sd[i]), "" if mad is None else int(mad[i])] for i, rid in enumerate(cols["row_id"])]
    run.write_rows("outliers.csv", ["row_id", column, "outlier_sd", "outlier_mad"], rows)
    if note:
        print(f"note: mad rule skipped: {note}", file=sys.stderr)
    return run


def cmd_tree(cfg: RunConfig, labels_path: Path, column: str) -> Run:
    run = Run("tree", cfg)
    data = load_data(cfg)
    with stage("labels"):
        cols = _read_columns(labels_path)
        if column not in cols or "row_id" not in cols:
            raise ValueError(f"{labels_path}: need columns row_id and {column}")
        pos = {r: i for i, r in enumerate(data.row_ids)}
        unknown = [r for r in cols["row_id"] if r not in pos]
        if unknown:
            raise ValueError(f"row ids not in data: {', '.join(unknown[:5])}")
        idx = np.array([pos[r] for r in cols["row_id"]], dtype=np.int64)
        label = np.array([int(v) for v in cols[column]])
    info = _fit_and_write_tree(run, data.take(idx), label)
    run.write_json("tree.json", {"ctree": info, "n": int(idx.size)})
    return run


# ------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="transportlab", description="Covariate-shift transport with weighted BART.")
    ap.add_argument("--version", action="version", version=f"transportlab {__version__}")
    sub = ap.add_subparsers(dest="cmd", required=True)
    for name, helptext in (
        ("simulate", "write synthetic source.csv, target.csv and merged.csv"),
        ("transport", "overlap scores, weights, weighted BART, predictions, outliers and ctree"),
        ("cv", "cross-validated comparison table"),
        ("weights", "overlap scores and balancing weights only"),
        ("outliers", "flag low predictions in a CSV column"),
        ("tree", "fit the conditional inference tree to a 0/1 label column"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", "-c", type=Path, help="INI run configuration")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE")
        p.add_argument("--out", type=str, help="output directory (same as --set output.dir=...)")
        if name == "outliers":
            p.add_argument("--input", type=Path, required=True)
            p.add_argument("--column", default="post_mean")
        if name == "tree":
            p.add_argument("--labels", type=Path, required=True)
            p.add_argument("--column", default="low_flag")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.overrides)
    if args.out:
        overrides.append(f"output.dir={args.out}")
    try:
        cfg = load_config(args.config, overrides)
        if args.cmd == "simulate":
            run = cmd_simulate(cfg)
        elif args.cmd == "transport":
            run = cmd_transport(cfg)
        elif args.cmd == "cv":
            run = cmd_cv(cfg)
        elif args.cmd == "weights":
            run = cmd_weights(cfg)
        elif args.cmd == "outliers":
            run = cmd_outliers(cfg, args.input, args.column)
        else:
            run = cmd_tree(cfg, args.labels, args.column)
    except ConfigError as exc:
        print(f"transportlab {args.cmd}: config error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        if isinstance(exc.__cause__, ConfigError):
            print(f"transportlab {args.cmd}: config error: {exc.__cause__}", file=sys.stderr)
            return 2
        print(f"transportlab {args.cmd}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"transportlab {args.cmd}: {exc}", file=sys.stderr)
        return 1
    print(f"transportlab {args.cmd}: wrote {', '.join(run.written)} to {run.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
