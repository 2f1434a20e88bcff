"""Command-line front end: ``sbmcv generate | fit | sweep``.

Every command writes into an output directory together with a
``manifest.json`` recording the command, the effective configuration, the
hashes of the inputs and the files produced.  Configuration precedence is
flags, then the ``--config`` JSON file, then the built-in defaults.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from pathlib import Path


from . import __version__, assess, em, synth
from .graph import GraphFormatError, largest_component, load_graph
from .model import DEGREE_CORRECTED, canonical_kind, planted_partition

logger = logging.getLogger("sbmcv")

JOBS_ENV = "SBMCV_JOBS"

PLOT_SCRIPT = '''\
"""Plot a q-sweep written by ``sbmcv sweep``.  Usage: python plot_sweep.py [sweep.csv] [out.png]"""
import csv
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

src = sys.argv[1] if len(sys.argv) > 1 else "sweep.csv"
dst = sys.argv[2] if len(sys.argv) > 2 else "sweep.png"
with open(src, newline="") as fh:
    rows = list(csv.DictReader(fh))
q = [int(r["q"]) for r in rows]

fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9, 3.5))
ax0.plot(q, [float(r["f_bethe"]) for r in rows], "o-k")
ax0.set_xlabel("q")
ax0.set_ylabel("Bethe free energy")
for name, style in (("gibbs", "o-"), ("bayes", "s-"), ("map", "^-"), ("training", "v-")):
    y = [float(r["e_" + name]) for r in rows]
    se = [float(r["se_" + name]) for r in rows]
    line, = ax1.plot(q, y, style, label=name)
    ax1.fill_between(q, [a - b for a, b in zip(y, se)], [a + b for a, b in zip(y, se)],
                     color=line.get_color(), alpha=0.2)
ax1.set_xlabel("q")
ax1.set_ylabel("error per edge")
ax1.legend()
fig.tight_layout()
fig.savefig(dst, dpi=150)
'''


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _write_manifest(out: Path, command: str, config: dict, inputs: list, outputs: list,
                    started: str) -> Path:
    doc = {
        "command": command,
        "tool": "sbmcv",
        "version": __version__,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": sorted(str(Path(p).relative_to(out)) for p in outputs),
        "started": started,
        "finished": _now(),
    }
    path = out / "manifest.json"
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("config file must hold a JSON object")
    return doc


def _fit_config(args) -> em.FitConfig:
    """Defaults, overridden by the config file, overridden by explicit flags."""
    d = em.FitConfig().to_dict()
    d.update(_load_config(args.config))
    for key in ("tol", "max_sweeps", "damping", "em_tol", "max_em_iters", "restarts", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            d[key] = val
    return em.FitConfig.from_dict(d)


def _default_jobs() -> int:
    raw = os.environ.get(JOBS_ENV)
    if raw is None:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise SystemExit(f"{JOBS_ENV} must be an integer, got {raw!r}")


def _read_graph(args):
    g = load_graph(args.graph, format=args.format)
    if any(g.dropped.values()):
        logger.warning("dropped while loading: %s", g.dropped)
    if getattr(args, "largest_component", False):
        g, _ = largest_component(g)
    if g.m == 0:
        raise GraphFormatError("graph has no edges", None)
    return g


def cmd_generate(args) -> int:
    started = _now()
    out = Path(args.out)
    kind = canonical_kind(args.model)
    if kind == DEGREE_CORRECTED:
        hp = synth.planted_dcsbm_params(args.q, args.c, args.eps, args.n)
        pg = synth.sample_dcsbm(hp, seed=args.seed, tau=args.tau, d_max=args.dmax, mean_degree=args.c)
    else:
        hp = planted_partition(args.q, args.c, args.eps, args.n)
        pg = synth.sample_sbm(hp, seed=args.seed)
    paths = pg.save(out, stem="graph")
    config = {"model": kind, "q": args.q, "n": args.n, "c": args.c, "eps": args.eps,
              "tau": args.tau, "dmax": args.dmax, "seed": args.seed}
    _write_manifest(out, "generate", config, [], list(paths.values()), started)
    print(f"wrote {pg.graph.n} vertices, {pg.graph.m} edges to {out}")
    return 0


def cmd_fit(args) -> int:
    started = _now()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = _fit_config(args)
    g = _read_graph(args)
    res = em.fit(g, args.q, kind=args.model, cfg=cfg)
    row = assess.assess(res, g, args.q)

    labels_path = out / "labels.tsv"
    synth.write_labels(res.hard_labels, labels_path, vertex_names=g.labels)
    marg_path = out / "marginals.tsv"
    with open(marg_path, "w") as fh:
        for v in range(g.n):
            fh.write(f"{g.labels[v]}\t" + "\t".join(repr(float(x)) for x in res.state.marginals[v]) + "\n")
    hp_path = out / "hyperparams.json"
    res.hyperparams.to_json(hp_path)
    report = {
        "q": args.q,
        "kind": res.hyperparams.kind,
        "free_energy": res.free_energy,
        "converged": res.converged,
        "init_used": res.init_used,
        "em_iters": res.em_iters,
        "fe_trace": res.fe_trace,
        "sweeps": res.state.sweeps,
        "residual": res.state.residual,
        "candidates": [vars(c) for c in res.candidates],
        "warnings": res.warnings,
        "assessment": row.to_dict(),
    }
    inputs = [Path(args.graph)]
    if args.labels:
        truth = synth.read_labels(args.labels)
        report["overlap"] = synth.overlap(res.hard_labels, truth)
        inputs.append(Path(args.labels))
        print(f"overlap with {args.labels}: {report['overlap']:.4f}")
    report_path = out / "report.json"
    with open(report_path, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    config = {"fit": cfg.to_dict(), "q": args.q, "model": canonical_kind(args.model),
              "largest_component": args.largest_component}
    _write_manifest(out, "fit", config, inputs, [labels_path, marg_path, hp_path, report_path], started)
    status = "converged" if res.converged else "NOT converged"
    print(f"q={args.q} f_bethe={res.free_energy:.8f} ({status}, init {res.init_used})")
    return 0


def cmd_sweep(args) -> int:
    started = _now()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.qmin < 1 or args.qmax < args.qmin:
        raise SystemExit("need 1 <= qmin <= qmax")
    cfg = _fit_config(args)
    g = _read_graph(args)
    jobs = args.jobs if args.jobs is not None else _default_jobs()
    rows = assess.sweep(g, (args.qmin, args.qmax), kind=args.model, cfg=cfg, jobs=jobs)
    selected = assess.one_se_select(rows, criterion=args.criterion)

    csv_path = out / "sweep.csv"
    assess.write_csv(rows, csv_path)
    json_path = out / "sweep.json"
    assess.write_json(rows, json_path, extra={"criterion": args.criterion, "selected_q": selected})
    sel_path = out / "selected_q.txt"
    sel_path.write_text(f"{selected}\n")
    plot_path = out / "plot_sweep.py"
    plot_path.write_text(PLOT_SCRIPT)
    config = {"fit": cfg.to_dict(), "qmin": args.qmin, "qmax": args.qmax,
              "model": canonical_kind(args.model), "criterion": args.criterion, "jobs": jobs,
              "largest_component": args.largest_component}
    _write_manifest(out, "sweep", config, [Path(args.graph)],
                    [csv_path, json_path, sel_path, plot_path], started)
    for r in rows:
        flag = "" if r.converged else "  (not converged)"
        print(f"q={r.q}  f={r.f_bethe:.6f}  gibbs={r.e_gibbs:.6f}  bayes={r.e_bayes:.6f}{flag}")
    print(f"selected q = {selected} ({args.criterion}, one-SE rule)")
    return 0


def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--graph", required=True, help="edge list or GML file")
    p.add_argument("--format", choices=("edgelist", "gml"), help="override suffix detection")
    p.add_argument("--model", default="sbm", help="sbm or dcsbm")
    p.add_argument("--config", help="JSON file with FitConfig fields")
    p.add_argument("--largest-component", action="store_true",
                   help="restrict to the largest connected component")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-sweeps", dest="max_sweeps", type=int)
    p.add_argument("--damping", type=float)
    p.add_argument("--em-tol", dest="em_tol", type=float)
    p.add_argument("--max-em-iters", dest="max_em_iters", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sbmcv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a planted SBM or DC-SBM graph")
    p.add_argument("--model", default="sbm")
    p.add_argument("--q", type=int, default=4)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--c", type=float, default=6.0, help="mean degree")
    p.add_argument("--eps", type=float, default=0.1, help="omega_out / omega_in")
    p.add_argument("--tau", type=float, default=-2.0, help="power-law exponent (dcsbm)")
    p.add_argument("--dmax", type=float, default=100.0, help="maximum degree (dcsbm)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit one q and write labels, marginals and parameters")
    _add_fit_flags(p)
    p.add_argument("--q", type=int, required=True)
    p.add_argument("--labels", help="planted labels file; reports the overlap")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sweep", help="fit and assess a range of q")
    _add_fit_flags(p)
    p.add_argument("--qmin", type=int, default=1)
    p.add_argument("--qmax", type=int, default=8)
    p.add_argument("--criterion", choices=assess.CRITERIA, default="gibbs")
    p.add_argument("--jobs", type=int, help=f"worker processes (default ${JOBS_ENV} or 1)")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (GraphFormatError, OSError, ValueError) as exc:
        print(f"sbmcv: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
