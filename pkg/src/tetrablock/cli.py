"""Command-line front end.

    tetrablock geometry 1 1 1
    tetrablock e0 1 2 3 --gamma 1 1 1
    tetrablock minimize --input problem.json --seed 0 --out result.json
    tetrablock coexist 2 2 2 --cap 12
    tetrablock place --input problem.json --grid 3 --out placement.csv
    tetrablock eta-check --input problem.json
    tetrablock greens --grid 64 --out samples.csv

Records go out as JSON and tables as CSV, both tagged with SCHEMA_VERSION.
Exit codes: 0 ok, 2 numeric failure, 3 bad input.
"""

import argparse
import csv
import io
import json
import math
import sys
import time

import jsonschema
import numpy as np

from . import geometry, partition, torus
from .energy import Configuration, GammaMatrix, e0, e0_gradient
from .errors import DomainError, NumericError

SCHEMA_VERSION = 1
EXIT_OK, EXIT_NUMERIC, EXIT_INPUT = 0, 2, 3

_number = {"type": "number"}
PROBLEM_SCHEMA = {
    "type": "object",
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "M": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 3, "maxItems": 3},
        "Gamma": {
            "type": "array", "minItems": 3, "maxItems": 3,
            "items": {"type": "array", "items": _number, "minItems": 3, "maxItems": 3},
        },
        "count_cap": {"type": ["integer", "null"], "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "n_grid": {"type": "integer", "minimum": 1},
        "eta": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "minItems": 1},
        "configuration": {
            "type": "array", "minItems": 1,
            "items": {"type": "array", "items": {"type": "number", "minimum": 0},
                      "minItems": 3, "maxItems": 3},
        },
        "positions": {
            "type": "array",
            "items": {"type": "array", "items": _number, "minItems": 2, "maxItems": 2},
        },
        "output": {"type": "string"},
    },
    "required": ["Gamma"],
    "additionalProperties": False,
}


class InputError(Exception):
    pass


def load_problem(path):
    """Parse and validate a problem file; Gamma symmetry is checked here."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read problem file {path}: {exc}") from exc
    try:
        jsonschema.validate(data, PROBLEM_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise InputError(f"problem file {path}: {exc.message}") from exc
    try:
        data["Gamma"] = GammaMatrix(data["Gamma"])
    except DomainError as exc:
        raise InputError(f"problem file {path}: {exc}") from exc
    return data


def _need(pf, key, cmd):
    if key not in pf:
        raise InputError(f"'{cmd}' needs '{key}' in the problem file")
    return pf[key]


def _seed(args, pf):
    seed = args.seed if args.seed is not None else pf.get("seed")
    if seed is None:
        raise InputError("a seed is required (--seed or 'seed' in the problem file)")
    return int(seed)


# -- output -------------------------------------------------------------------


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def record_json(kind, payload):
    rec = {"schema_version": SCHEMA_VERSION, "record": kind}
    rec.update(payload)
    return json.dumps(_clean(rec), indent=2, sort_keys=True) + "\n"


def table_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["schema_version"] + list(header))
    for r in rows:
        w.writerow([SCHEMA_VERSION] + [repr(float(v)) if isinstance(v, (float, np.floating)) else v
                                       for v in r])
    return buf.getvalue()


def _emit(text, path, out):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        out.write(text)


def _bubble_rows(config):
    rows = []
    for k, b in enumerate(config):
        g = geometry.solve(b)
        radii = [1.0 / c if c and math.isfinite(c) else float("inf") for c in g.curvatures]
        rows.append([k, b.label] + list(b.values) + [g.perimeter] +
                    [radii[i] if b.values[i] > 0 else "" for i in range(3)])
    return rows


BUBBLE_HEADER = ["bubble", "kind", "m1", "m2", "m3", "perimeter", "r1", "r2", "r3"]


# -- commands -----------------------------------------------------------------


def _geometry_record(g):
    arcs = {str(i + 1): [{"start": a.start, "end": a.end, "curvature": a.curvature,
                          "length": a.length, "tangent": a.tangent} for a in arcs]
            for i, arcs in g.boundaries.items()}
    return {
        "kind": g.kind.name.lower(),
        "masses": g.masses,
        "perimeter": g.perimeter,
        "curvatures": g.curvatures,
        "boundaries": arcs,
        "area_error": geometry.area_error(g),
    }


def cmd_geometry(args, out):
    g = geometry.solve(tuple(args.masses))
    _emit(record_json("geometry", _geometry_record(g)), args.out, out)
    return EXIT_OK


def _gamma_arg(args):
    if args.input:
        return load_problem(args.input)["Gamma"]
    vals = args.gamma
    if len(vals) == 3:
        return GammaMatrix.diagonal(*vals)
    if len(vals) == 9:
        return GammaMatrix(np.reshape(vals, (3, 3)))
    raise InputError("--gamma takes 3 (diagonal) or 9 values")


def cmd_e0(args, out):
    try:
        G = _gamma_arg(args)
    except DomainError as exc:
        raise InputError(str(exc)) from exc
    m = tuple(args.masses)
    rec = {"masses": m, "Gamma": G.values, "e0": e0(m, G),
           "gradient": e0_gradient(m, G)}
    _emit(record_json("e0", rec), args.out, out)
    return EXIT_OK


def cmd_minimize(args, out):
    pf = load_problem(args.input)
    M = _need(pf, "M", "minimize")
    seed = _seed(args, pf)
    cap = args.cap if args.cap is not None else pf.get("count_cap")
    t0 = time.perf_counter()
    res = partition.minimize_e0bar(M, pf["Gamma"], count_cap=cap, seed=seed)
    rows = _bubble_rows(res.configuration)
    path = args.out or pf.get("output")
    if path and path.endswith(".csv"):
        _emit(table_csv(BUBBLE_HEADER, rows), path, out)
    else:
        rec = {
            "M": M, "Gamma": pf["Gamma"].values, "seed": seed,
            "signature": res.signature.label, "energy": res.energy,
            "bubbles": [dict(zip(BUBBLE_HEADER, r)) for r in rows],
            "multipliers": res.multipliers, "spread": res.spread,
            "cap": res.cap, "cap_saturated": res.cap_saturated,
            "ties": [c.masses for c in res.ties],
            "bounds": res.bounds.to_record(),
        }
        _emit(record_json("minimize", rec), path, out)
    if path:
        out.write(f"{res.signature.label}  energy {res.energy:.12g}  "
                  f"({time.perf_counter() - t0:.1f}s)\n")
    return EXIT_OK


def cmd_coexist(args, out):
    M, G, cert = partition.coexistence_params(args.N1, args.N2, args.N3)
    rec = {"N": [args.N1, args.N2, args.N3], "M": M, "Gamma": G.values, "certificate": cert}
    if not args.no_verify:
        cap = args.cap if args.cap is not None else partition.HARD_CAP
        seed = args.seed if args.seed is not None else 0
        t0 = time.perf_counter()
        res = partition.minimize_e0bar(M, G, count_cap=cap, seed=seed)
        nt, nd, ns = partition.coexistence_counts(res.configuration)
        rec["verification"] = {
            "signature": res.signature.label, "energy": res.energy, "cap": cap,
            "cap_saturated": res.cap_saturated, "seconds": time.perf_counter() - t0,
            "counts": [
                {"kind": "triple", "found": nt, "required": args.N1, "ok": nt >= args.N1},
                {"kind": "double_23", "found": nd, "required": args.N2, "ok": nd >= args.N2},
                {"kind": "single_3", "found": ns, "required": args.N3, "ok": ns >= args.N3},
            ],
            "bubbles": [dict(zip(BUBBLE_HEADER, r)) for r in _bubble_rows(res.configuration)],
        }
    _emit(record_json("coexist", rec), args.out, out)
    return EXIT_OK


def _configuration(pf, args, cmd):
    if "configuration" in pf:
        return Configuration(tuple(tuple(b) for b in pf["configuration"]))
    M = _need(pf, "M", cmd)
    seed = _seed(args, pf)
    return partition.minimize_e0bar(M, pf["Gamma"], count_cap=pf.get("count_cap"),
                                    seed=seed).configuration


def cmd_place(args, out):
    pf = load_problem(args.input)
    config = _configuration(pf, args, "place")
    n_grid = args.grid if args.grid is not None else pf.get("n_grid")
    place = torus.optimize_placement(config, pf["Gamma"], n_grid=n_grid)
    pair = torus.min_pairwise_distance(place) if len(place) > 1 else None
    header = ["bubble", "x", "y", "kind", "m1", "m2", "m3", "min_distance"]
    rows = []
    for k, (x, b) in enumerate(zip(place.positions, config)):
        rows.append([k, x[0], x[1], b.label] + list(b.values) +
                    [pair.distance if pair else ""])
    _emit(table_csv(header, rows), args.out or pf.get("output"), out)
    if args.out or pf.get("output"):
        line = f"min distance {pair.distance:.6g} between {pair.pair}" if pair else "one bubble"
        out.write(f"{line}; energy {place.energy:.12g}; grid {place.n_grid}\n")
    return EXIT_OK


def cmd_eta(args, out):
    pf = load_problem(args.input)
    config = _configuration(pf, args, "eta-check")
    G = pf["Gamma"]
    if "positions" in pf:
        if len(pf["positions"]) != len(config):
            raise InputError("positions and configuration have different lengths")
        place = torus.TorusPlacement(np.array(pf["positions"], float))
    else:
        place = torus.optimize_placement(config, G, n_grid=pf.get("n_grid"))
    tol = args.tol if args.tol is not None else pf.get("tol", 1e-8)
    header = ["eta", "E_eta", "e0_sum", "perimeter", "self_log", "self_regular", "cross",
              "remainder", "scaled_remainder", "eta_max"]
    rows = []
    for eta in pf.get("eta", [1e-2, 1e-3, 1e-4]):
        d = torus.assemble_E_eta(config, place, eta, G, tol=tol)
        rows.append([eta, d["total"], d["e0_sum"], d["perimeter"], d["self_log"],
                     d["self_regular"], d["cross"], d["remainder"], abs(d["remainder"]) *
                     abs(math.log(eta)), d["eta_max"]])
    _emit(table_csv(header, rows), args.out or pf.get("output"), out)
    return EXIT_OK


def cmd_greens(args, out):
    tol = args.tol if args.tol is not None else 1e-10
    ev = torus.default_evaluator()
    ev.check_tol(tol)
    n = args.grid if args.grid is not None else 32
    s = (np.arange(n) + 0.5) / n - 0.5
    rows = []
    for x in s:
        for y in s:
            rows.append([x, y, ev.value(np.array([x, y]))])
    _emit(table_csv(["x", "y", "G"], rows), args.out, out)
    mean = torus.zero_mean_check(ev)
    target = out if args.out else sys.stderr
    target.write(f"zero-mean check (256x256 midpoint grid): {mean:.3e}\n")
    target.write(f"R(0) = {ev.regular(np.zeros(2)):.15g}\n")
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="tetrablock", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, input_required=False):
        sp.add_argument("--input", required=input_required, help="problem file (JSON)")
        sp.add_argument("--seed", type=int, help="seed for multi-start perturbations")
        sp.add_argument("--cap", type=int, help="per-type lobe cap")
        sp.add_argument("--tol", type=float, help="tolerance")
        sp.add_argument("--grid", type=int, help="grid size")
        sp.add_argument("--out", help="output path (default stdout)")

    sp = sub.add_parser("geometry", help="solve one single/double/triple bubble")
    sp.add_argument("masses", type=float, nargs=3)
    common(sp)
    sp.set_defaults(func=cmd_geometry)

    sp = sub.add_parser("e0", help="droplet energy of one bubble")
    sp.add_argument("masses", type=float, nargs=3)
    sp.add_argument("--gamma", type=float, nargs="+", default=[1.0, 1.0, 1.0],
                    help="3 diagonal or 9 row-major entries (ignored with --input)")
    common(sp)
    sp.set_defaults(func=cmd_e0)

    sp = sub.add_parser("minimize", help="global mass partition")
    common(sp, input_required=True)
    sp.set_defaults(func=cmd_minimize)

    sp = sub.add_parser("coexist", help="coexistence parameters and their verification")
    for name in ("N1", "N2", "N3"):
        sp.add_argument(name, type=int)
    sp.add_argument("--no-verify", action="store_true", help="skip the optimizer run")
    common(sp)
    sp.set_defaults(func=cmd_coexist)

    sp = sub.add_parser("place", help="optimize bubble positions on the torus")
    common(sp, input_required=True)
    sp.set_defaults(func=cmd_place)

    sp = sub.add_parser("eta-check", help="finite-eta energy and remainder table")
    common(sp, input_required=True)
    sp.set_defaults(func=cmd_eta)

    sp = sub.add_parser("greens", help="Green's function samples and checks")
    common(sp)
    sp.set_defaults(func=cmd_greens)
    return p


def main(argv=None, out=None):
    out = out if out is not None else sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        return args.func(args, out)
    except (InputError, DomainError) as exc:
        sys.stderr.write(f"input error: {exc}\n")
        return EXIT_INPUT
    except NumericError as exc:
        sys.stderr.write(f"numeric failure: {exc}\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
