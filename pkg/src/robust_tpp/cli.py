"""Command-line front end: simulate, fit, dist, cluster, eval.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ClusterConfig, config_hash
from .distance import DistanceMatrix, distance_matrix
from .errors import ConfigError, DataError, RobustTPPError
from .events import Dataset, dataset_hash, load_streams, write_events_csv
from .intensity import EventDesign, FittedIntensity, fit_intensities, loglik_matrix
from .metrics import detection_scores, purity, restrict
from .robust_em import ClusterModel, fit
from .scenarios import OUTLIER_LABEL, load_scenario, paper_scenario, simulate_scenario
from .spline import build_basis, eval_basis, quadrature_grid

log = logging.getLogger("robust_tpp")


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------------ helpers


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def build_config(args) -> ClusterConfig:
    d = {}
    if getattr(args, "config", None):
        try:
            d.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: {exc}") from None
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        d[k.strip()] = _parse_value(v.strip())
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        d["threads"] = args.threads
    cfg = ClusterConfig.from_dict(d)
    if cfg.threads is None:
        cfg.threads = os.cpu_count() or 1
    return cfg.validate()


def _read_csv(path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    if not rows:
        raise DataError(f"{path}: empty file")
    return [h.strip() for h in rows[0]], [r for r in rows[1:] if r]


def _column_value(path, column: str) -> str | None:
    """The single value of ``column`` in a CSV, or None when absent."""
    header, rows = _read_csv(path)
    if column not in header:
        return None
    j = header.index(column)
    vals = {r[j] for r in rows if len(r) > j}
    if len(vals) > 1:
        raise DataError(f"{path}: column {column} is not constant")
    return vals.pop() if vals else None


def _load_events(path, cfg: ClusterConfig) -> Dataset:
    try:
        return load_streams(path, period_T=cfg.T)
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: {exc}") from None


def _load_fits(path) -> tuple[list[FittedIntensity], dict]:
    doc = _read_json(path)
    if "fits" not in doc:
        raise DataError(f"{path}: expected a 'fits' list")
    try:
        return [FittedIntensity.from_dict(d) for d in doc["fits"]], doc
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"{path}: malformed fit entry ({exc})") from None


def _check_hash(label: str, expected, found, force: bool):
    if expected is None or found is None or expected == found:
        return
    msg = f"{label} hash mismatch: {found} != {expected}"
    if not force:
        raise ConfigError(msg + " (use --force to override)")
    log.warning(msg)


# ------------------------------------------------------------------ commands


def cmd_simulate(args) -> int:
    if args.scenario:
        sc = load_scenario(args.scenario)
    else:
        sc = paper_scenario(args.outlier_type, args.L, args.shift)
    if args.seed is not None:
        sc["seed"] = args.seed
    sim = simulate_scenario(sc)
    h = config_hash(sc)
    src = dataset_hash(sim.dataset)
    write_events_csv(args.out, sim.dataset, sim.labels, {"config_hash": h})
    if args.truth:
        with open(args.truth, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "label", "is_outlier", "shift", "config_hash", "source_hash"])
            for sid in sim.dataset.ids:
                w.writerow([sid, sim.labels[sid], int(sid in sim.outliers), sim.shifts[sid], h, src])
    print(f"wrote {len(sim.dataset)} streams to {args.out} (source_hash {src})")
    return 0


def cmd_fit(args) -> int:
    cfg = build_config(args)
    data = _load_events(args.events, cfg)
    basis = build_basis(cfg.H, cfg.T)
    fits = fit_intensities(data.streams, basis, cfg.fit_max_iters, cfg.fit_tol)
    slow = [f.id for f in fits if not f.converged]
    if slow:
        log.info("%d fits hit fit_max_iters=%d before fit_tol (first: %s)", len(slow), cfg.fit_max_iters, slow[0])
    _write_json(args.out, {
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "source_hash": dataset_hash(data),
        "fits": [f.to_dict() for f in fits],
    })
    print(f"wrote {len(fits)} fits to {args.out}")
    return 0


def cmd_dist(args) -> int:
    cfg = build_config(args)
    fits, doc = _load_fits(args.fits)
    D = distance_matrix(fits, cfg.shift, cfg.H_shift, cfg.G, cfg.threads)
    D.to_csv(args.out, doc.get("config_hash", cfg.hash()))
    print(f"wrote {D.n}x{D.n} distance matrix to {args.out}")
    return 0


def cmd_cluster(args) -> int:
    cfg = build_config(args)
    data = _load_events(args.events, cfg)
    cfg.validate(len(data))
    h, src = cfg.hash(), dataset_hash(data)
    fits = None
    if args.fits:
        fits, doc = _load_fits(args.fits)
        _check_hash("fits source", src, doc.get("source_hash"), args.force)
        if [f.id for f in fits] != data.ids:
            raise DataError(f"{args.fits}: stream ids differ from {args.events}")
    distances = None
    if args.dist:
        D = DistanceMatrix.from_csv(args.dist)
        if list(D.ids) != data.ids:
            raise DataError(f"{args.dist}: stream ids differ from {args.events}")
        distances = D.values
    res = fit(data, cfg, fits=fits, distances=distances)
    if not res.converged:
        log.warning("EM stopped at max_iters=%d without converging", cfg.max_iters)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = res.model.to_dict(res.ids)
    mu = [None if np.isnan(m) else float(m) for m in res.mu]
    model.update({"config": cfg.to_dict(), "config_hash": h, "source_hash": src,
                  "converged": res.converged, "n_iter": res.n_iter, "mu_hat": mu})
    _write_json(out / "model.json", model)

    with open(out / "assignments.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label", "r_max", "w_max", "is_outlier", "shift", "config_hash", "source_hash"])
        outl = set(res.outliers.tolist())
        shifts = res.model.shifts
        for n, sid in enumerate(res.ids):
            w.writerow([
                sid, int(res.labels[n]), repr(float(res.r[n].max())), repr(float(res.w[n].max())),
                int(n in outl), "" if shifts is None else repr(float(shifts[n])), h, src,
            ])

    with open(out / "trace.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "max_param_delta", *(f"mu_hat_{k}" for k in range(cfg.K)), "config_hash"])
        for row in res.trace:
            w.writerow([row["iter"], repr(row["max_param_delta"]), *(repr(m) for m in row["mu_hat"]), h])

    print(f"K={cfg.K} iterations={res.n_iter} converged={res.converged} outliers={len(res.outliers)}")
    print(f"wrote model.json, assignments.csv, trace.csv to {out}")
    return 0


def _read_assignments(path):
    header, rows = _read_csv(path)
    need = ["id", "label", "is_outlier"]
    for c in need:
        if c not in header:
            raise DataError(f"{path}: missing column {c}")
    ix = {c: header.index(c) for c in header}
    labels = {r[ix["id"]]: r[ix["label"]] for r in rows}
    outl = {r[ix["id"]] for r in rows if r[ix["is_outlier"]] == "1"}
    return labels, outl


def _read_truth(path):
    header, rows = _read_csv(path)
    if "id" not in header or "label" not in header:
        raise DataError(f"{path}: truth needs 'id' and 'label' columns")
    i, j = header.index("id"), header.index("label")
    k = header.index("is_outlier") if "is_outlier" in header else None
    labels, outl = {}, set()
    for r in rows:
        sid, lab = r[i], r[j]
        if labels.setdefault(sid, lab) != lab:
            raise DataError(f"{path}: stream {sid!r} has conflicting labels")
        if (r[k] == "1") if k is not None else lab == OUTLIER_LABEL:
            outl.add(sid)
    return labels, outl


def _truth_source_hash(path):
    """Source hash of a truth file: embedded column, or recomputed from its events."""
    embedded = _column_value(path, "source_hash")
    if embedded is not None:
        return embedded
    header, _ = _read_csv(path)
    if "time" in header:
        return dataset_hash(load_streams(path, period_T=float(_column_value(path, "period_T") or 24.0)))
    return None


def cmd_eval(args) -> int:
    pred, pred_out = _read_assignments(args.assignments)
    truth, true_out = _read_truth(args.truth)
    h = _column_value(args.assignments, "config_hash")
    _check_hash("source", _column_value(args.assignments, "source_hash"), _truth_source_hash(args.truth), args.force)
    model_doc = None
    if args.model:
        model_doc = _read_json(args.model)
        _check_hash("config", h, model_doc.get("config_hash"), args.force)

    missing = sorted(set(pred) ^ set(truth))
    if missing:
        raise DataError(f"stream {missing[0]!r} is not in both assignments and truth")
    inl = [i for i in truth if i not in true_out]
    rows = [("purity", purity(pred, truth), "all")]
    if inl:
        rows.append(("purity", purity(restrict(pred, inl), restrict(truth, inl)), "inliers"))
    prec, rec = detection_scores(pred_out, true_out)
    rows += [("outlier_precision", prec, "all"), ("outlier_recall", rec, "all"),
             ("n_outliers", float(len(pred_out)), "all")]

    if args.baseline_model:
        if not (args.model and args.events):
            raise UsageError("--baseline-model needs --model and --events")
        rows += _mle_rows(args, model_doc, pred, pred_out)

    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value", "scope", "config_hash"])
        for name, val, scope in rows:
            w.writerow([name, repr(float(val)), scope, h or ""])
    for name, val, scope in rows:
        print(f"{name:<18} {scope:<8} {val:.4f}")

    if args.emit_grid:
        if model_doc is None:
            raise UsageError("--emit-grid needs --model")
        _emit_grid(args.emit_grid, model_doc, args.grid_points, h)
    return 0


def _mle_rows(args, model_doc, pred, pred_out):
    base_doc = _read_json(args.baseline_model)
    a = ClusterModel.from_dict(model_doc)
    b = ClusterModel.from_dict(base_doc)
    data = load_streams(args.events, period_T=a.basis.T)
    if list(pred) != data.ids:
        pred = {i: pred[i] for i in data.ids}
    la = loglik_matrix(EventDesign(data.streams, a.basis, a.shifts), a.B)
    lb = loglik_matrix(EventDesign(data.streams, b.basis, b.shifts), b.B)
    # each model scores every stream under its own most responsible class
    def assigned(m, ll):
        with np.errstate(divide="ignore"):
            return ll[np.arange(len(ll)), np.argmax(np.log(m.pi)[None, :] + ll, axis=1)]
    sa, sb = assigned(a, la), assigned(b, lb)
    keep = np.array([i not in pred_out for i in data.ids])
    out = [("mle_ratio", float(np.mean(sa > sb)), "all")]
    if keep.any():
        out.append(("mle_ratio", float(np.mean(sa[keep] > sb[keep])), "out"))
    return out


def _emit_grid(path, model_doc, G, h):
    m = ClusterModel.from_dict(model_doc)
    nodes, _ = quadrature_grid(m.basis.T, G)
    curves = m.B @ eval_basis(m.basis, nodes).T
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *(f"lambda_{k}" for k in range(m.K)), "config_hash"])
        for g, t in enumerate(nodes):
            w.writerow([repr(float(t)), *(repr(float(c)) for c in curves[:, g]), h or ""])


def cmd_print_config(args) -> int:
    print(json.dumps(build_config(args).to_dict(), indent=2, sort_keys=True))
    return 0


# ------------------------------------------------------------------ parser


def _config_args(p, sub=True):
    # subcommand copies must not clobber values given before the subcommand
    kw = {"default": argparse.SUPPRESS} if sub else {}
    p.add_argument("--config", help="JSON file with config keys", **kw)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key", **kw)
    p.add_argument("--seed", type=int, **kw)
    p.add_argument("--threads", type=int, **kw)


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="robust-tpp", description=__doc__.splitlines()[0])
    p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    _config_args(p, sub=False)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("simulate", help="scenario -> events CSV with truth labels")
    s.add_argument("--scenario", help="scenario JSON (default: built-in mixture scenario)")
    s.add_argument("--outlier-type", type=int, default=1, choices=(1, 2, 3))
    s.add_argument("--L", type=int, default=4)
    s.add_argument("--shift", action="store_true")
    s.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    s.add_argument("--truth", help="also write id,label,is_outlier,shift")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="events CSV -> fitted-intensity JSON")
    f.add_argument("events")
    f.add_argument("--out", required=True)
    _config_args(f)
    f.set_defaults(func=cmd_fit)

    d = sub.add_parser("dist", help="fits JSON -> distance-matrix CSV")
    d.add_argument("fits")
    d.add_argument("--out", required=True)
    _config_args(d)
    d.set_defaults(func=cmd_dist)

    c = sub.add_parser("cluster", help="events (+ optional fits/distances) -> model, assignments, trace")
    c.add_argument("events")
    c.add_argument("--fits")
    c.add_argument("--dist")
    c.add_argument("--out", required=True, help="output directory")
    c.add_argument("--force", action="store_true")
    _config_args(c)
    c.set_defaults(func=cmd_cluster)

    e = sub.add_parser("eval", help="assignments + truth -> metrics CSV")
    e.add_argument("assignments")
    e.add_argument("--truth", required=True, help="CSV with id,label[,is_outlier]; an events CSV works")
    e.add_argument("--model")
    e.add_argument("--events", help="events CSV, for mle_ratio")
    e.add_argument("--baseline-model")
    e.add_argument("--out", required=True)
    e.add_argument("--emit-grid", metavar="PATH", help="write class intensity curves on a grid")
    e.add_argument("--grid-points", type=int, default=241)
    e.add_argument("--force", action="store_true")
    e.set_defaults(func=cmd_eval)
    return p


def run(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        if args.print_config:
            return cmd_print_config(args)
        if args.command is None:
            raise UsageError("a subcommand is required (simulate, fit, dist, cluster, eval)")
        return args.func(args)
    except RobustTPPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
