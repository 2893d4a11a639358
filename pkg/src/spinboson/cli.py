"""Command-line front end.

Subcommands ``validate``, ``energy``, ``gsnorm``, ``oracle`` and ``pairings``.
Exit codes: 0 success, 2 invalid configuration, 3 numerical non-convergence.
Every run that gets as far as an output directory writes ``manifest.json``.
"""
from __future__ import annotations

import argparse
import json
import sys
import traceback
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, OUT_ENV, RunConfig, load_config
from .fock import DimensionError, EigenError, asymptotic_report, discrete_rs, discretize
from .graph import QuadratureError
from .model import validate_model
from .outputs import Manifest, csv_text, json_text
from .pairings import (connected_components, enumerate_pair_partitions, enumerate_pairings, is_linked,
                       linked_components, linked_spanning_pairings, n_set, unpaired_intervals)
from .quadrature import QuadratureConfig
from .renorm import RenormEngine

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

ENERGY_COLUMNS = ("n", "E_n", "error_estimate", "method")
NORM_COLUMNS = ("m", "norm2", "error_estimate", "method")
ORACLE_COLUMNS = ("lambda", "E", "bound_low", "partial_sum_n", "remainder", "slope_window")


class NumericalError(RuntimeError):
    pass


def _setup(command, config_path, out, preset, seed):
    """Load the configuration and open the manifest; returns (cfg, manifest, code)."""
    cfg, err = None, None
    try:
        cfg = load_config(config_path, seed=seed, preset=preset)
    except ConfigError as e:
        err = str(e)
    out_dir = cfg.out_dir(out) if cfg else (out or _env_out())
    man = Manifest(out_dir, command, cfg.digest() if cfg else None)
    if err:
        man.errors.append({"stage": "config", "message": err})
        return None, man, EXIT_CONFIG
    return cfg, man, EXIT_OK


def _env_out():
    import os
    return os.environ.get(OUT_ENV) or "out"


def _validate_stage(cfg: RunConfig, man: Manifest) -> int:
    man.start("validate")
    rep = validate_model(cfg.model, cfg.coupling)
    man.stop("validate")
    for c in rep.checks:
        man.check(f"admissibility:{c.name}", c.passed, c.message or None)
    if not rep.ok:
        for c in rep.failures():
            man.errors.append({"stage": "validate", "message": c.message})
        return EXIT_CONFIG
    return EXIT_OK


def _finish(man: Manifest, code: int, quiet: bool = False) -> int:
    man.exit_code = code
    man.save()
    if not quiet:
        for e in man.errors:
            print(f"error [{e['stage']}]: {e['message']}", file=sys.stderr)
    return code


def _quad(cfg: RunConfig, nodes: Optional[int] = None) -> QuadratureConfig:
    c = cfg.compute
    return QuadratureConfig(nodes or c["nodes"], "rational", float(c["scale"]))


def _run(stage, man, fn):
    """Run ``fn`` and translate numerical failures to exit 3, size limits to exit 2."""
    man.start(stage)
    try:
        return fn(), EXIT_OK
    except (QuadratureError, EigenError, NumericalError, FloatingPointError, np.linalg.LinAlgError) as e:
        man.errors.append({"stage": stage, "message": str(e), "trace": getattr(e, "trace", None)})
        return None, EXIT_NUMERIC
    except DimensionError as e:
        man.errors.append({"stage": stage, "message": str(e)})
        return None, EXIT_CONFIG
    finally:
        if stage in man._t0:
            man.stop(stage)


# -- subcommands ---------------------------------------------------------------

def cmd_validate(config: Optional[str] = None, out: Optional[str] = None, preset: Optional[str] = None,
                 seed: Optional[int] = None) -> int:
    cfg, man, code = _setup("validate", config, out, preset, seed)
    if cfg is None:
        return _finish(man, code)
    code = _validate_stage(cfg, man)
    rep = validate_model(cfg.model, cfg.coupling)
    man.write_text("validate.json", json_text(rep.as_dict()))
    print(json.dumps(rep.as_dict(), sort_keys=True, default=str))
    return _finish(man, code)


def _coarse_nodes(cfg):
    half = cfg.compute["nodes"] // 2
    return half if half >= 8 else None


def cmd_energy(config: Optional[str] = None, out: Optional[str] = None, workers: int = 1,
               order: Optional[int] = None, preset: Optional[str] = None, seed: Optional[int] = None) -> int:
    cfg, man, code = _setup("energy", config, out, preset, seed)
    if cfg is None or _validate_stage(cfg, man):
        return _finish(man, code or EXIT_CONFIG)
    n_max = cfg.compute["n_max"] if order is None else order
    if not 0 <= n_max <= 6:
        man.errors.append({"stage": "config", "message": f"order must be within 0..6, got {n_max}"})
        return _finish(man, EXIT_CONFIG)
    routes = cfg.compute["routes"]
    eta_cfg = cfg.compute["eta"]
    records, rows = [], []

    def direct():
        eng = RenormEngine(cfg.model, cfg.coupling, _quad(cfg), workers)
        series = eng.energy_series(n_max)
        coarse = None
        if _coarse_nodes(cfg):
            ceng = RenormEngine(cfg.model, cfg.coupling, _quad(cfg, _coarse_nodes(cfg)), workers)
            coarse = ceng.energy_series(n_max).coefficients
            ceng.close()
        eng.close()
        for k, e in enumerate(series.coefficients):
            err = abs(e - coarse[k]) if coarse is not None else float("nan")
            d = series.diagnostics[k]
            method = "exact" if k < 2 else ("parity" if k % 2 else "renormalized-direct")
            rows.append((k, e, err, method))
            records.append({"n": k, "E_n": e, "method": method, "error_estimate": err,
                            "eta_trace": None, "pairing_count": d.get("pairing_count", 0),
                            "quadrature_nodes": cfg.compute["nodes"], "quadrature_hash": eng.quad.digest()})
            man.stages[f"energy_direct_n{k}"] = d.get("wall_time", 0.0)

    def eta():
        eng = RenormEngine(cfg.model, cfg.coupling, _quad(cfg), workers)
        etas = eng.default_etas(eta_cfg["levels"], eta_cfg.get("eta0"))
        flagged = []
        for k in range(n_max + 1):
            if k < 2 or k % 2:
                eng.energy_coefficient(k)
                rows.append((k, eng.E[k], 0.0, "exact" if k < 2 else "parity"))
                records.append({"n": k, "E_n": eng.E[k], "method": rows[-1][3] + "-eta", "error_estimate": 0.0,
                                "eta_trace": None, "pairing_count": 0, "quadrature_nodes": cfg.compute["nodes"],
                                "quadrature_hash": eng.quad.digest()})
                continue
            est = eng.energy_coefficient_eta(k, etas)
            rows.append((k, est.value, est.error, "eta-richardson"))
            records.append({"n": k, "E_n": est.value, "method": "eta-richardson", "error_estimate": est.error,
                            "eta_trace": {"eta": est.etas, "values": est.samples, "table": est.table,
                                          "largest_term": est.largest_terms, "flagged": est.flagged},
                            "pairing_count": None, "quadrature_nodes": cfg.compute["nodes"],
                            "quadrature_hash": eng.quad.digest()})
            if est.flagged:
                flagged.append(f"E_{k}: {est.message}")
        eng.close()
        if flagged:
            raise NumericalError("; ".join(flagged))

    worst = EXIT_OK
    for route, fn in (("direct", direct), ("eta", eta)):
        if route in routes:
            _, c = _run(f"energy_{route}", man, fn)
            worst = max(worst, c)
    if "direct" in routes and "eta" in routes:
        d = {r[0]: r[1] for r in rows if r[3] == "renormalized-direct"}
        for r in rows:
            if r[3] == "eta-richardson" and r[0] in d:
                diff = abs(r[1] - d[r[0]])
                man.check(f"routes_agree_n{r[0]}", diff <= max(3 * r[2], 1e-12), {"difference": diff, "eta_error": r[2]})
    fmts = cfg.output["formats"]
    if "csv" in fmts:
        man.write_text("energy.csv", csv_text(ENERGY_COLUMNS, rows))
    if "json" in fmts:
        man.write_text("energy.json", json_text({"model": _model_block(cfg), "records": records}))
    man.extra["n_max"] = n_max
    man.extra["workers"] = workers
    return _finish(man, worst)


def _model_block(cfg: RunConfig) -> dict:
    return {"config_hash": cfg.digest(), "model": cfg.raw["model"], "coupling": cfg.raw.get("coupling"),
            "quadrature": {"nodes": cfg.compute["nodes"], "scale": cfg.compute["scale"]}, "version": __version__}


def cmd_gsnorm(config: Optional[str] = None, out: Optional[str] = None, workers: int = 1,
               order: Optional[int] = None, preset: Optional[str] = None, seed: Optional[int] = None) -> int:
    cfg, man, code = _setup("gsnorm", config, out, preset, seed)
    if cfg is None or _validate_stage(cfg, man):
        return _finish(man, code or EXIT_CONFIG)
    m_max = cfg.compute["m_max"] if order is None else order
    if not 0 <= m_max <= 3:
        man.errors.append({"stage": "config", "message": f"m_max must be within 0..3, got {m_max}"})
        return _finish(man, EXIT_CONFIG)
    rows, records = [], []

    def run():
        eng = RenormEngine(cfg.model, cfg.coupling, _quad(cfg), workers)
        ceng = RenormEngine(cfg.model, cfg.coupling, _quad(cfg, _coarse_nodes(cfg)), workers) \
            if _coarse_nodes(cfg) else None
        for m in range(m_max + 1):
            v = eng.gs_norm(m)
            err = abs(v - ceng.gs_norm(m)) if ceng else float("nan")
            method = "exact" if m == 0 else "g-route-eta0"
            rows.append((m, v, err, method))
            records.append({"m": m, "norm2": v, "eta": 0.0, "method": method, "error_estimate": err,
                            "quadrature_nodes": cfg.compute["nodes"], "quadrature_hash": eng.quad.digest()})
        eng.close()
        if ceng:
            ceng.close()

    _, code = _run("gsnorm", man, run)
    if "csv" in cfg.output["formats"]:
        man.write_text("gsnorm.csv", csv_text(NORM_COLUMNS, rows))
    if "json" in cfg.output["formats"]:
        man.write_text("gsnorm.json", json_text({"model": _model_block(cfg), "records": records}))
    return _finish(man, code)


def cmd_oracle(config: Optional[str] = None, out: Optional[str] = None, workers: int = 1,
               order: Optional[int] = None, preset: Optional[str] = None, seed: Optional[int] = None) -> int:
    cfg, man, code = _setup("oracle", config, out, preset, seed)
    if cfg is None or _validate_stage(cfg, man):
        return _finish(man, code or EXIT_CONFIG)
    o = cfg.oracle
    n = o["order"] if order is None else order
    lam = np.geomspace(o["lambda"]["hi"], o["lambda"]["lo"], o["lambda"]["points"])
    state = {}

    def run():
        dm = discretize(cfg.model, cfg.coupling, o["modes"], o["n_max"], float(cfg.compute["scale"]))
        if o["coefficients"] == "self-consistent":
            coeffs = discrete_rs(dm, n).coefficients
        else:
            if n > 6:
                raise DimensionError("continuum coefficients are limited to order 6")
            eng = RenormEngine(cfg.model, cfg.coupling, _quad(cfg), workers)
            coeffs = eng.energy_series(n).coefficients
            eng.close()
        state["dm"], state["report"] = dm, asymptotic_report(dm, coeffs, lam, n)

    _, code = _run("oracle", man, run)
    rep = state.get("report")
    if rep is not None:
        man.check("variational_upper_bound", all(b.ok_upper for b in rep.bounds))
        man.check("completed_square_lower_bound", all(b.ok_lower for b in rep.bounds))
        man.check("number_bound", all(b.ok_number for b in rep.bounds))
        man.check("remainder_slope", abs(rep.slope - rep.expected_slope) <= 0.1 * rep.expected_slope,
                  {"slope": rep.slope, "expected": rep.expected_slope, "note": rep.rate_note})
        fmts = cfg.output["formats"]
        if "csv" in fmts:
            man.write_text("oracle.csv", csv_text(ORACLE_COLUMNS, rep.csv_rows()))
            man.write_text("oracle_coefficients.csv",
                           csv_text(("k", "E_k", "source"), [(k, e, o["coefficients"]) for k, e in enumerate(rep.coefficients)]))
        if "json" in fmts:
            man.write_text("oracle.json", json_text({
                "model": _model_block(cfg), "model_hash": state["dm"].digest(), "modes": o["modes"],
                "n_max": o["n_max"], "order": n, "coefficients": rep.coefficients,
                "slopes": {str(k): v for k, v in rep.slopes.items()}, "expected_slope": rep.expected_slope,
                "rate": rep.rate_note,
                "rows": [{"lambda": b.lam, "E": b.energy, "bound_low": b.lower, "bound_high": b.upper,
                          "number": b.number, "number_bound": b.number_bound, "residual": b.residual}
                         for b in rep.bounds]}))
    return _finish(man, code)


def pairing_records(n: int, mode: str = "partitions", components: bool = False):
    """JSON-ready records for ``N_n``; ``mode`` is partitions, pairings, linked or spanning."""
    carrier = n_set(n)
    if mode == "partitions":
        source = enumerate_pair_partitions(carrier)
    elif mode == "pairings":
        source = enumerate_pairings(carrier)
    elif mode == "linked":
        source = (P for P in enumerate_pairings(carrier) if is_linked(P))
    elif mode == "spanning":
        source = linked_spanning_pairings(carrier)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    for P in source:
        rec = {"n": n, "pairing": [list(p) for p in P], "linked": is_linked(P)}
        if components:
            rec["linked_components"] = [[list(p) for p in c] for c in linked_components(P)]
            rec["connected_components"] = [[list(p) for p in c] for c in connected_components(P)]
            rec["unpaired_intervals"] = [list(I) for I in unpaired_intervals(P, carrier)]
        yield rec


def cmd_pairings(n: int, mode: str = "partitions", components: bool = False, out: Optional[str] = None,
                 stream=None) -> int:
    if n < 0 or n > 14:
        print(f"error: n must be within 0..14, got {n}", file=sys.stderr)
        return EXIT_CONFIG
    lines = [json.dumps(r, sort_keys=True) for r in pairing_records(n, mode, components)]
    text = "".join(line + "\n" for line in lines)
    if out:
        man = Manifest(out, "pairings")
        man.write_text("pairings.jsonl", text)
        man.extra.update({"n": n, "mode": mode, "records": len(lines)})
        return _finish(man, EXIT_OK)
    (stream or sys.stdout).write(text)
    return EXIT_OK


# -- argument parsing --------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spinboson", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, workers=True, order=True):
        sp.add_argument("--config", metavar="PATH", help="YAML run configuration")
        sp.add_argument("--out", metavar="DIR", help=f"output directory (default ${OUT_ENV} or ./out)")
        sp.add_argument("--preset", metavar="NAME", help="override the model with a named preset")
        sp.add_argument("--seed", type=int, help="seed for the random-atom preset")
        if workers:
            sp.add_argument("--workers", type=int, default=1, metavar="N")
        if order:
            sp.add_argument("--order", type=int, metavar="N", help="override the maximum order")

    common(sub.add_parser("validate", help="check model admissibility"), workers=False, order=False)
    common(sub.add_parser("energy", help="energy coefficients E_0..E_n"))
    common(sub.add_parser("gsnorm", help="ground-state norms ||psi_m||^2"))
    common(sub.add_parser("oracle", help="truncated Fock-space check of the expansion"))
    sp = sub.add_parser("pairings", help="dump pairings of {1..n} as JSON lines")
    sp.add_argument("n", type=int)
    g = sp.add_mutually_exclusive_group()
    for mode in ("partitions", "pairings", "linked", "spanning"):
        g.add_argument(f"--{mode}", dest="mode", action="store_const", const=mode)
    sp.add_argument("--components", action="store_true", help="include component decompositions")
    sp.add_argument("--out", metavar="DIR")
    sp.set_defaults(mode="partitions")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            return cmd_validate(args.config, args.out, args.preset, args.seed)
        if args.command == "pairings":
            return cmd_pairings(args.n, args.mode, args.components, args.out)
        fn = {"energy": cmd_energy, "gsnorm": cmd_gsnorm, "oracle": cmd_oracle}[args.command]
        if args.workers < 1:
            print("error: --workers must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        return fn(args.config, args.out, args.workers, args.order, args.preset, args.seed)
    except KeyboardInterrupt:  # pragma: no cover
        return 130
    except Exception:  # pragma: no cover
        traceback.print_exc()
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
