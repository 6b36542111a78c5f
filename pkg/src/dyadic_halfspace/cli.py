"""Command-line front end.

Subcommands:

    gen        write a seeded random instance
    constants  the eight weight characteristics of an instance
    decompose  dump the stopping-time decomposition of one grid
    verify     run theorem verifiers on an instance or a seeded batch
    search     seeded hill-climb for near-extremal instances
    report     summarize the result files of a run directory

Results are JSON lines on stdout; ``verify`` also appends a CSV summary
(columns ``theorem_id, seed, lhs, rhs, margin, pass``) when ``--out`` names a
run directory.  ``verify`` exits 0 iff every emitted result passed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .core import GridFamily
from .errors import DyadicError, InfiniteConstant
from .instance import Instance, generate, load, random_instance
from .numeric import format_number
from . import theorems as T
from . import weights as W
from .sparse import decompose, invariant_report, level_set_identity_check

CSV_COLUMNS = ("theorem_id", "seed", "lhs", "rhs", "margin", "pass")
RESULTS_FILE = "results.jsonl"
SUMMARY_FILE = "summary.csv"


def _emit(obj, out=None):
    line = json.dumps(obj, sort_keys=True)
    (out or sys.stdout).write(line + "\n")


def _as_float(inst: Instance) -> Instance:
    from .core import HalfSpaceMeasure

    ws = [w.as_float() for w in inst.weights]
    fs = [f.as_float() for f in inst.functions]
    mu = inst.mu
    mu = HalfSpaceMeasure(mu.xs.astype(float), mu.ts.astype(float), mu.masses.astype(float)) if len(mu) else mu
    return Instance(inst.lattice, inst.exponents, ws, fs, mu, inst.seed, inst.meta)


def _load(path: str, use_float: bool) -> Instance:
    p = Path(path)
    if not p.is_file():
        raise SystemExit(f"instance file not found: {path}")
    inst = load(p)
    return _as_float(inst) if use_float else inst


# --------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    p = [s for s in args.p.split(",")] if args.p else None
    inst = generate(args.seed, n=args.n, m=args.m, p=p, L0=args.L0, L=args.L, B=args.B, atoms=args.atoms,
                    density=not args.no_lift)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        inst.save(out)
    else:
        sys.stdout.write(inst.dumps() + "\n")
    return 0


def cmd_constants(args) -> int:
    inst = _load(args.inp, args.float)
    grids = GridFamily.for_lattice(inst.lattice)
    ws, ex, mu = inst.weights, inst.exponents, inst.mu
    v = W.v_weight(ws, ex)
    oracle = args.mode == "oracle"
    reports = [
        W.a_p_constant(ws, ex, grids),
        W.a_p_prime_constant(mu, ws, ex, grids),
        W.c0_constant(mu, v, grids),
        W.c_infty_constant(mu, v, grids),
    ]
    if oracle:
        reports.append(W.s_prime_constant(mu, ws, ex, grids, mode="oracle"))
    else:
        reports.append(max((W.s_prime_constant(mu, ws, ex, grids, b) for b in range(grids.size)),
                           key=lambda r: r.value))
    reports += [
        W.b_prime_constant(mu, ws, ex, grids),
        W.rh_constant(ws, ex, grids),
        W.w_infty_constant(ws, ex, grids, mode=args.winf_mode or ("oracle" if oracle else "grid")),
    ]
    for r in reports:
        _emit(r.to_json())
    return 0


def cmd_decompose(args) -> int:
    inst = _load(args.inp, args.float)
    grids = GridFamily.for_lattice(inst.lattice)
    if not 0 <= args.grid < grids.size:
        raise SystemExit(f"grid index {args.grid} out of range 0..{grids.size - 1}")
    fam = decompose(inst.functions, grids, args.grid, inst.mu)
    dump = fam.as_dict()
    inv = invariant_report(fam)
    ident = level_set_identity_check(fam, inst.mu)
    dump["max_sparsity_ratio"] = format_number(max((fam.sparsity_ratio(c) for c in range(len(fam))), default=0))
    dump["checks"] = {
        "invariants": {"ok": inv.ok, "checked": inv.checked, "violations": [str(v) for v in inv.violations[:20]]},
        "level_set_identity": {"ok": ident.ok, "checked": ident.checked,
                               "violations": [str(v) for v in ident.violations[:20]]},
    }
    _emit(dump)
    return 0 if inv.ok and ident.ok else 1


def _theorem_ids(spec: str) -> list:
    if spec == "all":
        return list(T.THEOREMS)
    ids = spec.split(",")
    known = set(T.THEOREMS) | {"ap_prime_duality"}
    for t in ids:
        if t not in known:
            raise SystemExit(f"unknown theorem id {t!r}; choose from {sorted(known)} or 'all'")
    return ids


def _verify_one(job) -> list:
    """Verify one instance for several theorems; returns (seed, theorem, json) records."""
    inst, theorem_ids, seed = job
    out = []
    problem = None
    for th in theorem_ids:
        try:
            if problem is None:
                problem = T.Problem(inst.mu, inst.weights, inst.functions, inst.exponents, None, inst.digest())
            res = T.verify_instance(th, inst, seed=seed, problem=problem)
            rec = res.to_json()
        except InfiniteConstant as exc:
            rec = {"theorem_id": th, "pass": True, "skipped": "infinite_constant", "reason": str(exc),
                   "instance_digest": inst.digest(), "lhs": None, "rhs": None, "margin": None}
        rec["seed"] = seed
        out.append((seed, th, rec))
    return out


def cmd_verify(args) -> int:
    ids = _theorem_ids(args.theorem)
    jobs = []
    if args.inp:
        inst = _load(args.inp, args.float)
        jobs.append((inst, ids, inst.seed if inst.seed is not None else args.seed))
    else:
        if args.batch is None:
            raise SystemExit("verify needs --in PATH or --batch K")
        for s in range(args.seed, args.seed + args.batch):
            inst = random_instance(s)
            jobs.append((_as_float(inst) if args.float else inst, ids, s))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            chunks = list(pool.map(_verify_one, jobs))
    else:
        chunks = [_verify_one(j) for j in jobs]
    records = sorted((r for c in chunks for r in c), key=lambda r: (r[0], ids.index(r[1])))
    out_dir = Path(args.out) if args.out else None
    fh = None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        fh = (out_dir / RESULTS_FILE).open("a")
    all_pass = True
    rows = []
    for seed, th, rec in records:
        _emit(rec)
        if fh:
            _emit(rec, fh)
        all_pass &= bool(rec["pass"])
        rows.append([th, seed, rec.get("lhs"), rec.get("rhs"), rec.get("margin"), rec["pass"]])
    if fh:
        fh.close()
        path = out_dir / SUMMARY_FILE
        new = not path.exists()
        with path.open("a", newline="") as f:
            w = csv.writer(f)
            if new:
                w.writerow(CSV_COLUMNS)
            w.writerows(rows)
    return 0 if all_pass else 1


def cmd_search(args) -> int:
    ids = _theorem_ids(args.theorem)
    worst = 0.0
    for th in ids:
        cfg = {"seed": args.seed, "iterations": args.iters, "n": args.n, "m": args.m, "L0": args.L0, "L": args.L,
               "p": args.p.split(",") if args.p else None}
        rep = T.stress_search(th, cfg)
        worst = max(worst, rep.best_ratio)
        rec = rep.to_json()
        if not args.keep_instance:
            rec.pop("best_instance")
        _emit(rec)
    return 0 if worst <= 1 else 1


def cmd_report(args) -> int:
    d = Path(args.dir)
    if not d.is_dir():
        raise SystemExit(f"not a directory: {args.dir}")
    summary: dict = {}
    for path in sorted(d.glob(SUMMARY_FILE)):
        with path.open() as f:
            for row in csv.DictReader(f):
                s = summary.setdefault(row["theorem_id"], {"count": 0, "passed": 0, "min_margin": None})
                s["count"] += 1
                s["passed"] += row["pass"] == "True"
                if row["margin"] not in ("", "None", "inf"):
                    m = float(row["margin"]) if "/" not in row["margin"] else float(eval_fraction(row["margin"]))
                    s["min_margin"] = m if s["min_margin"] is None else min(s["min_margin"], m)
    for th in sorted(summary):
        _emit({"theorem_id": th, **summary[th]})
    with (d / "report.csv").open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["theorem_id", "count", "passed", "min_margin"])
        for th in sorted(summary):
            s = summary[th]
            w.writerow([th, s["count"], s["passed"], s["min_margin"]])
    return 0 if all(s["count"] == s["passed"] for s in summary.values()) else 1


def eval_fraction(text: str):
    from fractions import Fraction

    return Fraction(text)


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dyadic-halfspace", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a seeded random instance")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--n", type=int, default=1)
    g.add_argument("--m", type=int, default=1)
    g.add_argument("--p", help="comma-separated exponents, e.g. 2,3/2")
    g.add_argument("--L0", type=int, default=2)
    g.add_argument("--L", type=int, default=1)
    g.add_argument("--B", type=int, default=2, help="weight exponent range")
    g.add_argument("--atoms", type=int, default=6, help="random atoms on top of the lattice lift")
    g.add_argument("--no-lift", action="store_true", help="omit the lattice-lift part of mu")
    g.add_argument("--out")
    g.set_defaults(fn=cmd_gen)

    c = sub.add_parser("constants", help="weight characteristics")
    c.add_argument("--in", dest="inp", required=True)
    c.add_argument("--mode", choices=("dyadic", "oracle"), default="dyadic")
    c.add_argument("--winf-mode", choices=("grid", "dyadic", "oracle"))
    c.add_argument("--float", action="store_true", help="binary64 instead of exact rationals")
    c.set_defaults(fn=cmd_constants)

    d = sub.add_parser("decompose", help="stopping-time decomposition dump")
    d.add_argument("--in", dest="inp", required=True)
    d.add_argument("--grid", type=int, default=0)
    d.add_argument("--float", action="store_true")
    d.set_defaults(fn=cmd_decompose)

    v = sub.add_parser("verify", help="run theorem verifiers")
    v.add_argument("--in", dest="inp")
    v.add_argument("--theorem", default="all")
    v.add_argument("--batch", type=int)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", help="run directory for results.jsonl and summary.csv (appended)")
    v.add_argument("--jobs", type=int, default=1)
    v.add_argument("--float", action="store_true")
    v.set_defaults(fn=cmd_verify)

    s = sub.add_parser("search", help="stress search")
    s.add_argument("--theorem", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--iters", type=int, default=100)
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--m", type=int, default=1)
    s.add_argument("--p")
    s.add_argument("--L0", type=int, default=2)
    s.add_argument("--L", type=int, default=0)
    s.add_argument("--keep-instance", action="store_true")
    s.set_defaults(fn=cmd_search)

    r = sub.add_parser("report", help="summarize a run directory")
    r.add_argument("--dir", required=True)
    r.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except DyadicError as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
