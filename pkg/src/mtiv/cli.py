"""Command-line front end: simulate, estimate, diagnose, oracle.

Exit codes: 0 success, 2 configuration error, 3 identification failure,
4 data error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .compliers import CellData, complier_cdf, make_cells, make_grid
from .core import MonotonicitySpec, PairRelation
from .counterfactual import build_all_maps, build_system_tables, solve_general
from .dgp import (
    PRESETS,
    DgpConfig,
    ResponseTypeDesign,
    ch_example_design,
    preset,
    simulate,
    validate_config,
)
from .diagnostics import (
    DEFAULT_DELTA,
    DEFAULT_DENSITY_FLOOR,
    SIGN,
    JacobianInput,
    all_pairs,
    cell_densities,
    check_assumption3,
    detect_sign_treatments,
    jacobian_determinant,
    moment_residual,
)
from .effects import DEFAULT_TAUS, effect_report, quantile_inside
from .errors import (
    AssumptionThreeViolated,
    ConfigError,
    ConfigInvalid,
    DataError,
    IdentificationError,
    MtivError,
    TauOutsideWindow,
)
from .io import read_dataset, read_json, write_dataset, write_json, write_table_csv
from .oracle import analytic_phi, grid_solve

log = logging.getLogger("mtiv")

EXIT_OK, EXIT_CONFIG, EXIT_IDENT, EXIT_DATA = 0, 2, 3, 4
ANALYTIC_SIZE = 400_000


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("MTIV_THREADS", "1")))
    except ValueError:
        raise ConfigInvalid("MTIV_THREADS must be an integer") from None


# ---------------------------------------------------------------------------
# inputs


def _dgp_config(args) -> DgpConfig | None:
    if getattr(args, "config", None):
        cfg = DgpConfig.from_dict(read_json(args.config))
        validate_config(cfg)
        return cfg
    if getattr(args, "preset", None):
        return preset(args.preset, args.k)
    return None


def _analytic(name: str):
    """'ch_example' or 'preset[:k]' to (design, config)."""
    if name == "ch_example":
        return ch_example_design(), None
    base, _, k = name.partition(":")
    cfg = preset(base, int(k) if k else None)
    return ResponseTypeDesign.from_config(cfg, n=ANALYTIC_SIZE), cfg


def load_inputs(args):
    """(cells, source description, dataset or None, DgpConfig or None)."""
    if getattr(args, "analytic", None):
        design, cfg = _analytic(args.analytic)
        return make_cells(design), {"analytic": args.analytic}, None, cfg
    if not getattr(args, "data", None):
        raise ConfigInvalid("give --data or --analytic")
    data_path = Path(args.data)
    manifest_path = Path(args.manifest) if getattr(args, "manifest", None) else \
        data_path.parent / "manifest.json"
    manifest = read_json(manifest_path) if manifest_path.is_file() else {}
    labels = args.labels.split(",") if getattr(args, "labels", None) else manifest.get("z_labels")
    k = args.k if getattr(args, "k", None) is not None else manifest.get("k")
    latent = getattr(args, "latent", None)
    data = read_dataset(data_path, k=k, labels=labels, latent_path=latent)
    cfg = _dgp_config(args)
    if cfg is None and "config" in manifest:
        cfg = DgpConfig.from_dict(manifest["config"])
    src = {"data": str(data_path), "n": data.n, "fingerprint": data.fingerprint()}
    return CellData(data), src, data, cfg


def parse_pairs(text: str | None, labels) -> list[tuple]:
    """'c:a,b:c' or '2:0:2' style tokens to (z1, z2[, sign]) index tuples."""
    if not text:
        return []
    index = {str(s): i for i, s in enumerate(labels)}

    def z_of(tok):
        tok = tok.strip()
        if tok in index:
            return index[tok]
        try:
            v = int(tok)
        except ValueError:
            raise ConfigInvalid(f"unknown instrument label {tok!r}; labels are {list(labels)}") from None
        if not 0 <= v < len(labels):
            raise ConfigInvalid(f"instrument index {v} out of range")
        return v
    out = []
    for item in text.split(","):
        parts = item.split(":")
        if len(parts) not in (2, 3):
            raise ConfigInvalid(f"pair {item!r} must look like z1:z2 or z1:z2:sign")
        pair = (z_of(parts[0]), z_of(parts[1]))
        if pair[0] == pair[1]:
            raise ConfigInvalid(f"pair {item!r} repeats an instrument value")
        out.append(pair + ((int(parts[2]),) if len(parts) == 3 else ()))
    return out


def parse_taus(text: str | None) -> tuple[float, ...]:
    if not text:
        return DEFAULT_TAUS
    try:
        taus = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise ConfigInvalid(f"bad tau list {text!r}") from None
    if any(not 0 < t < 1 for t in taus):
        raise ConfigInvalid("tau values must lie in (0, 1)")
    return taus


# ---------------------------------------------------------------------------
# identification set


def identification_set(cells, pairs, eta_sign=None):
    """Sign detection and the distinct-sign pair search; returns (spec or None, sign results, verdict)."""
    p = cells.propensity
    k = p.k
    plain = [pr[:2] for pr in pairs] if pairs else all_pairs(len(p.z_labels))
    results = detect_sign_treatments(p, plain, eta_sign)
    forced = {i: pr[2] for i, pr in enumerate(pairs) if len(pr) == 3}
    for i, s in forced.items():
        if s not in results[i].candidates:
            raise AssumptionThreeViolated(
                f"declared sign treatment {s} for pair {plain[i]} contradicts the propensities "
                f"(detected {results[i].status} {results[i].candidates})",
                {"pair": plain[i], "declared": s})
        r = results[i]
        results[i] = type(r)(r.pair, r.differences, SIGN, (s,), r.eta)
    verdict = check_assumption3(results, k)
    if not verdict.satisfied:
        return None, results, verdict
    rels, chosen = [], []
    for i, r in enumerate(results):
        if i in verdict.lambda_star:
            chosen.append(len(rels))
            rels.append(r.relation(verdict.signs[verdict.lambda_star.index(i)]))
        elif r.status == SIGN:
            rels.append(r.relation())
    order = sorted(chosen, key=lambda j: rels[j].sign_treatment)
    return MonotonicitySpec(k, rels, tuple(order)), results, verdict


def _sign_summary(results, labels):
    return [{"pair": [labels[r.pair[0]], labels[r.pair[1]]], "differences": list(r.differences),
             "status": r.status, "candidates": list(r.candidates), "eta": r.eta}
            for r in results]


def _verdict_summary(verdict, results, labels):
    return {"verdict": verdict.verdict, "reason": verdict.reason,
            "lambda_star": [[labels[results[i].pair[0]], labels[results[i].pair[1]], s]
                            for i, s in zip(verdict.lambda_star, verdict.signs)],
            "min_complier_probability": verdict.strength}


# ---------------------------------------------------------------------------
# pipeline


def run_pipeline(cells, spec, grid_size=512, trim=0.01, eta=0.01, taus=DEFAULT_TAUS):
    grid = make_grid(cells, grid_size, trim)
    tables = build_system_tables(cells, spec, grid, eta)
    fam = build_all_maps(tables)
    eff = effect_report(fam, cells, spec, grid, taus, eta)
    return grid, tables, fam, eff


def quantile_vectors(eff, taus):
    ts = sorted(eff.cdfs)
    out = {}
    for tau in taus:
        try:
            out[float(tau)] = np.array([quantile_inside(eff.cdfs[t].cdf, tau) for t in ts])
        except TauOutsideWindow:
            continue
    return out


def residual_curves(cells, qv):
    labels = cells.z_labels
    curves = {lab: [] for lab in labels}
    for tau, y in qv.items():
        r = moment_residual(y, tau, cells)
        for z, lab in enumerate(labels):
            curves[lab].append([tau, float(r[z])])
    return curves


def estimate_report(cells, pairs=None, taus=DEFAULT_TAUS, grid_size=512, trim=0.01,
                    eta=0.01, eta_sign=None):
    """Full estimation report as a dict plus CSV companion tables."""
    labels = cells.z_labels
    p = cells.propensity
    report = {"propensity": {"z_labels": list(labels), "matrix": p.values,
                             "exact": p.exact}}
    spec, results, verdict = identification_set(cells, pairs, eta_sign)
    report["sign_treatments"] = _sign_summary(results, labels)
    report["assumption3"] = _verdict_summary(verdict, results, labels)
    if spec is None:
        raise AssumptionThreeViolated(verdict.reason, report)
    grid, tables, fam, eff = run_pipeline(cells, spec, grid_size, trim, eta, taus)
    k = spec.k
    comp = []
    for i, tab in list(tables.in_tables.items()):
        comp.append(_table_summary(tab, labels, f"equation {i} sign"))
    for (i, j), tab in tables.out_tables.items():
        comp.append(_table_summary(tab, labels, f"equation {i} term {j}"))
    K = fam.fixed_treatment
    report["grid"] = {"size": int(grid.size), "lower": float(grid[0]), "upper": float(grid[-1]),
                      "trim": trim}
    report["complier_tables"] = comp
    report["maps"] = {"fixed_treatment": K, "order": list(fam.order),
                      "domain": {str(t): [float(d[0]), float(d[-1]), int(d.size)]
                                 for t, d in fam.domains.items()},
                      "excluded_nodes": fam.excluded_nodes, "flat_nodes": fam.flat_nodes,
                      "flat_width": _flat_width(fam, grid),
                      "repaired": {str(t): v for t, v in fam.repaired.items()}}
    report["effects"] = {
        "means": {str(t): m.mean for t, m in eff.means.items()},
        "ate": {f"{s}_{t}": v for (s, t), v in eff.ate.items()},
        "qte": {f"{s}_{t}": curve for (s, t), curve in eff.qte.items()},
        "late": [{"t": a, "t_prime": b, "group": lab, "value": v}
                 for (a, b, lab), v in eff.late.items()],
        "lqte": [{"t": a, "t_prime": b, "group": lab, "curve": c}
                 for (a, b, lab), c in eff.lqte.items()],
        "z_invariance": {str(t): v for t, v in eff.z_invariance.items()},
        "metadata": eff.metadata,
    }
    qv = quantile_vectors(eff, taus)
    curves = residual_curves(cells, qv)
    report["diagnostics"] = {
        "moment_residuals": curves,
        "max_abs_moment_residual": max((abs(r) for c in curves.values() for _, r in c), default=None),
    }
    flags = {"saturated_or_excluded_nodes": fam.excluded_nodes, "flat_nodes": fam.flat_nodes,
             "clamped_evaluations": eff.clamped}
    report["flags"] = flags
    report["warnings"] = list(fam.warnings) + list(eff.warnings)
    csvs = {
        "phi": (["y_" + str(K)] + [f"phi_{K}_{t}" for t in fam.order if t != K],
                list(zip(fam.domains[K].tolist(),
                         *[fam[(K, t)].images.tolist() for t in fam.order if t != K]))),
        "qte": (["tau"] + [f"qte_{s}_{t}" for (s, t) in eff.qte],
                [[tau] + [eff.qte[key].get(tau, float("nan")) for key in eff.qte]
                 for tau in eff.taus]),
    }
    return report, csvs, (spec, grid, tables, fam, eff)


def _flat_width(fam, grid):
    """Total grid length of the nodes whose images sit on flat CDF stretches."""
    sol = fam.solution
    if sol is None:
        return fam.flat_nodes * float(np.mean(np.diff(grid)))
    keep = sol.valid & sol.flat
    return float(np.sum(np.diff(grid, append=grid[-1])[sol.y_f_index[keep]]))


def _table_summary(tab, labels, role):
    v, g = tab.values, tab.grid
    inside = np.flatnonzero((v > 0) & (v < 1))
    span = [float(g[inside[0]]), float(g[min(inside[-1] + 1, g.size - 1)])] if inside.size else None
    return {"role": role, "pair": [labels[tab.pair[0]], labels[tab.pair[1]]],
            "treatment": tab.treatment, "probability": tab.probability,
            "raw_top": tab.raw_top, "effective_size": tab.effective_size, "dkw": tab.dkw(),
            "observed_support": span}


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    cfg = _dgp_config(args)
    if cfg is None:
        raise ConfigInvalid("simulate needs --preset or --config")
    data = simulate(cfg, args.n, seed=args.seed, latent=not args.no_latent)
    files = write_dataset(data, args.out, latent=not args.no_latent)
    write_json(Path(args.out) / "manifest.json", {
        "command": "simulate", "seed": args.seed, "preset": args.preset, "k": cfg.k,
        "n": args.n, "z_labels": list(cfg.instrument_values), "config": cfg.to_dict(),
        "config_sha256": cfg.sha256(), "files": files,
    })
    print(f"wrote {', '.join(files)} and manifest.json to {args.out}")
    return EXIT_OK


def _write_report(out, report, csvs=None):
    write_json(out, report)
    base = Path(out)
    for name, (header, rows) in (csvs or {}).items():
        write_table_csv(base.with_name(f"{base.stem}_{name}.csv"), header, rows)


def cmd_estimate(args) -> int:
    cells, src, _, _ = load_inputs(args)
    pairs = parse_pairs(args.pairs, cells.z_labels)
    taus = parse_taus(args.taus)
    head = {"command": "estimate", "source": src,
            "settings": {"grid_size": args.grid_size, "trim": args.trim, "eta": args.eta,
                         "taus": list(taus), "pairs": args.pairs}}
    try:
        report, csvs, _ = estimate_report(cells, pairs, taus, args.grid_size, args.trim, args.eta)
    except IdentificationError as exc:
        partial = exc.certificate if isinstance(getattr(exc, "certificate", None), dict) else {}
        body = dict(head, status="identification_failure", error=type(exc).__name__,
                    message=str(exc))
        if "sign_treatments" in partial:
            body.update(partial)
        _write_report(args.out, body)
        raise
    _write_report(args.out, dict(head, status="ok", **report), csvs)
    ate = report["effects"]["ate"]
    print("ate: " + ", ".join(f"{k}={v:.4f}" for k, v in ate.items() if k[0] > k[-1]))
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cells, src, _, cfg = load_inputs(args)
    labels = cells.z_labels
    pairs = parse_pairs(args.pairs, labels)
    taus = tuple(np.round(np.linspace(args.delta, 1 - args.delta, args.sweep), 6))
    spec, results, verdict = identification_set(cells, pairs)
    report = {"command": "diagnose", "source": src,
              "sign_treatments": _sign_summary(results, labels),
              "assumption3": _verdict_summary(verdict, results, labels)}
    warnings = []
    qv = {}
    model = getattr(getattr(cells, "design", None), "outcome_model", None)
    if model is not None:
        qv = {float(t): np.array([float(f.ppf(t)) for f in model]) for t in taus}
    elif spec is not None:
        _, _, _, eff = run_pipeline(cells, spec, args.grid_size, args.trim, args.eta, taus)
        qv = quantile_vectors(eff, taus)
    else:
        warnings.append("no quantile vectors: no identifying pair set and the outcome model is unknown")
    k1 = cells.propensity.k + 1
    rows = tuple(range(k1))
    if len(labels) != k1:
        warnings.append(f"{len(labels)} instrument values; determinant uses the first {k1}")
    indep = bool(cells.exact and _instrument_independent(cells))
    inp = JacobianInput(cell_densities(cells), cells.propensity, rows, indep)
    sweep = []
    for tau, y in qv.items():
        jr = jacobian_determinant(inp, y)
        low = min(float(inp.densities(t, z, y[t])) for z in rows for t in range(k1)
                  if cells.propensity[z, t] > 0)
        sweep.append({"tau": tau, "y": y, "determinant": jr.determinant,
                      "density_product": jr.density_product,
                      "propensity_factor": jr.propensity_det, "factored": jr.factored,
                      "min_density": low, "in_region": low >= args.density_floor})
    if any(not r["in_region"] for r in sweep):
        warnings.append(f"sweep points with a cell density below {args.density_floor} "
                        f"are outside the full-rank region")
    if sweep:
        exact = jacobian_determinant(inp, next(iter(qv.values()))).propensity_det_exact
        report["propensity_determinant_exact"] = str(exact) if exact is not None else None
    report["determinant_sweep"] = sweep
    report["moment_residuals"] = residual_curves(cells, qv)
    report["warnings"] = warnings
    write_json(args.out, report)
    print(f"identifying pair set: {verdict.verdict}" + (f": {verdict.reason}" if verdict.reason else ""))
    return EXIT_OK


def _instrument_independent(cells) -> bool:
    ys = np.linspace(-3, 3, 7)
    p = cells.propensity
    for t in range(p.k + 1):
        rows = [cells.pdf(t, z, ys) for z in range(len(cells.z_labels)) if p[z, t] > 0]
        if any(not np.allclose(r, rows[0], rtol=1e-10, atol=1e-12) for r in rows[1:]):
            return False
    return True


def cmd_oracle(args) -> int:
    cells, src, _, cfg = load_inputs(args)
    model = cfg.outcome_model if cfg is not None else \
        getattr(getattr(cells, "design", None), "outcome_model", None)
    if model is None:
        raise ConfigInvalid("oracle needs an outcome model: --preset, --config, --analytic or a manifest")
    pairs = parse_pairs(args.pairs, cells.z_labels)
    if not pairs and cfg is not None and cfg.lambda_pairs:
        pairs = [tuple(x) for x in cfg.lambda_pairs]
    spec, results, verdict = identification_set(cells, pairs)
    if spec is None:
        raise AssumptionThreeViolated(verdict.reason)
    grid = make_grid(cells, args.grid_size, args.trim)
    fam = build_all_maps(build_system_tables(cells, spec, grid, args.eta))
    step = float(np.max(np.diff(grid)))
    phi = {}
    for (s, t), mp in fam.maps.items():
        if s == t:
            continue
        y = mp.grid
        u = model[s].cdf(y)
        keep = (u >= 0.01) & (u <= 0.99)
        if keep.any():
            err = np.abs(mp.images[keep] - analytic_phi(model, s, t, y[keep]))
            phi[f"{s}_{t}"] = float(err.max())
    report = {"command": "oracle", "source": src, "grid_step": step,
              "phi_sup_distance": phi, "phi_sup_distance_max": max(phi.values(), default=None)}
    k = spec.k
    if k <= 3:
        report["grid_solve"] = _grid_solve_check(cells, spec, model, args)
    write_json(args.out, report)
    print(f"max |phi - analytic| = {report['phi_sup_distance_max']:.4g} (grid step {step:.4g})")
    return EXIT_OK


def _grid_solve_check(cells, spec, model, args):
    k = spec.k
    size = args.oracle_grid or (256 if k <= 2 else 96)
    g = make_grid(cells, size, args.trim)
    tables = build_system_tables(cells, spec, g, args.eta)
    K = tables.fixed_treatment
    lo, hi = int(0.25 * size), int(0.75 * size)
    nodes = np.unique(np.linspace(lo, hi, args.nodes).astype(int))

    def one(i):
        y_f = float(g[i])
        try:
            sol = solve_general(tables, y_f)
        except IdentificationError as exc:
            return {"y_f": y_f, "error": type(exc).__name__}
        tau = float(model[K].cdf(y_f))
        gs = grid_solve(tau, cells, g)
        d = max(abs(sol[t] - gs.best[t]) for t in range(k + 1) if t in sol)
        return {"y_f": y_f, "tau": tau, "distance": float(d), "solutions": int(len(gs.solutions))}
    with ThreadPoolExecutor(_threads()) as ex:
        rows = list(ex.map(one, nodes))
    dist = [r["distance"] for r in rows if "distance" in r]
    step = float(np.max(np.diff(g)))
    return {"grid_size": int(size), "grid_step": step, "nodes": rows,
            "sup_distance": max(dist, default=None),
            "sup_distance_steps": (max(dist) / step) if dist else None}


# ---------------------------------------------------------------------------
# argument parsing


def _add_input(p):
    p.add_argument("--data", help="CSV with header y,t,z")
    p.add_argument("--latent", help="latent.csv written by simulate")
    p.add_argument("--manifest", help="manifest.json (default: next to the data file)")
    p.add_argument("--labels", help="comma-separated instrument labels in index order")
    p.add_argument("--analytic", help="exact cell CDFs: ch_example or preset[:k]")
    p.add_argument("--preset", help=f"structural preset ({', '.join(PRESETS)})")
    p.add_argument("--config", help="DGP config JSON")
    p.add_argument("--k", type=int, help="number of treatments minus one")
    p.add_argument("--pairs", help="instrument pairs, e.g. 'c:a,b:c' or '2:0:2'")
    p.add_argument("--grid-size", type=int, default=512)
    p.add_argument("--trim", type=float, default=0.01)
    p.add_argument("--eta", type=float, default=0.01)
    p.add_argument("--run-config", help="JSON file whose keys fill in any of these options")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mtiv", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"mtiv {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw a dataset from a structural design")
    s.add_argument("--preset")
    s.add_argument("--config")
    s.add_argument("--k", type=int)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--no-latent", action="store_true")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="maps, potential outcomes and effects")
    _add_input(e)
    e.add_argument("--taus", help="comma-separated quantile levels")
    e.add_argument("--out", required=True, help="report JSON path")
    e.set_defaults(func=cmd_estimate)

    d = sub.add_parser("diagnose", help="sign treatments, pair-set verdict, determinant sweep")
    _add_input(d)
    d.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    d.add_argument("--sweep", type=int, default=19)
    d.add_argument("--density-floor", type=float, default=DEFAULT_DENSITY_FLOOR)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_diagnose)

    o = sub.add_parser("oracle", help="compare pipeline maps with ground truth")
    _add_input(o)
    o.add_argument("--oracle-grid", type=int, default=0, help="grid size for grid_solve")
    o.add_argument("--nodes", type=int, default=50)
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_oracle)
    return ap


def _apply_run_config(ap, args):
    path = getattr(args, "run_config", None)
    if not path:
        return args
    conf = read_json(path)
    defaults = vars(ap.parse_args([args.command, "--out", "x"] if args.command != "simulate"
                                  else [args.command, "--n", "1", "--seed", "0", "--out", "x"]))
    for key, val in conf.items():
        key = key.replace("-", "_")
        if not hasattr(args, key):
            raise ConfigInvalid(f"unknown run-config key {key!r}")
        if getattr(args, key) == defaults.get(key):       # the command line wins
            setattr(args, key, val)
    return args


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _apply_run_config(ap, args)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IdentificationError as exc:
        print(f"identification failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_IDENT
    except DataError as exc:
        print(f"data error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_DATA
    except MtivError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
