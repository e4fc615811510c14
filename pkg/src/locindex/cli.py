"""Command-line front end: ``locindex <command> CONFIG [--out FILE] [--format json|csv]``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from typing import Callable

import numpy as np

from . import __version__
from .bsgeometry import QuotientStrip, inventory_for, polygon_from_config, window_plan
from .calculus import generate_system, rr_total, solve
from .config import ConfigError, ExperimentConfig, load_config
from .dirac import CylinderModel, DiscModel, assemble_cylinder, assemble_disc
from .errors import ConstructionError, NumericalNonConvergence, UnreliableGap
from .fiber_oracle import FlatTorusFiber, torus_spectrum
from .fibration import (
    Chart, CompatibleFibrationData, DiscreteModel, FiberSubgroup, StabilizerAssignment, acyclicity_certificate,
    admissible_partition_of_unity, average, check_good_cover, default_bump_seeds, default_cutoffs,
    default_inner_regions, good_open_cover, middle_regions, saturate, validate_fibration,
)
from .profile import emit_profile  # noqa: F401  re-exported for callers of the CLI module
from .spectral import GAP_FLOOR, deformation_scan, excision_sum, graded_index, low_spectrum, product_check

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGENCE, EXIT_UNRELIABLE = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# builders


def build_model(spec: dict, what: str = "model"):
    kind = spec["kind"]

    def need(*keys):
        miss = [k for k in keys if k not in spec]
        if miss:
            raise ConfigError(f"{what}: {kind} needs {', '.join(miss)} (no defaults for t or grid sizes)")

    if kind == "cylinder":
        need("r_min", "r_max", "radial_sites", "t")
        return CylinderModel(spec["r_min"], spec["r_max"], spec["radial_sites"], spec["t"],
                             mode_bound=spec.get("mode_bound"))
    if kind == "disc":
        need("radius_sq", "radial_sites", "t")
        return DiscModel(spec["radius_sq"], spec["radial_sites"], spec["t"], spec.get("mode_bound"))
    need("dim", "holonomy")
    return FlatTorusFiber(spec["dim"], tuple(spec["holonomy"]), spec.get("metric"))


def build_grid(spec: dict) -> DiscreteModel:
    return DiscreteModel(tuple(tuple(g) for g in spec.get("base", [])), tuple(spec.get("torus", [])))


def _region(model: DiscreteModel, boxes) -> np.ndarray:
    if not boxes:
        return model.full()
    mask = model.empty()
    for b in boxes:
        mask |= model.box(b.get("base"), b.get("torus"))
    return mask


def build_fibration(spec: dict) -> CompatibleFibrationData:
    model = build_grid(spec["grid"])
    charts = []
    for c in spec["charts"]:
        fiber = FiberSubgroup(tuple(tuple(g) for g in c["generators"]), model.torus_dims)
        charts.append(Chart(c["id"], _region(model, c.get("boxes")), fiber))
    return CompatibleFibrationData(model, tuple(charts))


def _field(model: DiscreteModel, spec: dict, seed: int) -> np.ndarray:
    kind = spec.get("kind", "random")
    if kind == "constant":
        return np.full(model.shape, float(spec.get("value", 1.0)))
    if kind == "coordinate":
        ax = spec.get("axis", 0)
        if ax >= len(model.shape):
            raise ConfigError(f"field axis {ax} out of range")
        idx = np.indices(model.shape)[ax].astype(float)
        return idx / max(model.shape[ax] - 1, 1)
    return np.random.default_rng(seed).random(model.shape)


# ---------------------------------------------------------------------------
# commands; each returns (records, exit code, plot rows)


Result = tuple[list[dict], int, list[tuple[float, float]]]


def cmd_fibration_check(cfg: ExperimentConfig) -> Result:
    spec = cfg.require("fibration")
    fib = build_fibration(spec)
    rep = validate_fibration(fib)
    recs = list(rep.records)
    summary = {"valid": rep.valid, "good": rep.good}
    hol = {c["id"]: c["holonomy"] for c in spec["charts"] if "holonomy" in c}
    if hol:
        if set(hol) != {c.id for c in fib.charts}:
            raise ConfigError("holonomy must be given for every chart or none")
        fields = {}
        for c in fib.charts:
            h = np.broadcast_to(np.asarray(hol[c.id], dtype=float), fib.model.shape + (c.fiber.rank,))
            fields[c.id] = np.where(c.region[..., None], h, np.nan) if c.fiber.rank else np.zeros(fib.model.shape + (0,))
        cert = acyclicity_certificate(fib, fields)
        recs += cert.records
        summary["certified"] = cert.certified
    return recs + [summary], EXIT_OK, []


def _fib_with_inner(cfg: ExperimentConfig):
    spec = cfg.require("fibration")
    fib = build_fibration(spec)
    margin = spec.get("margin", 1)
    return fib.with_inner(default_inner_regions(fib, margin)), margin


def cmd_average(cfg: ExperimentConfig) -> Result:
    fib, margin = _fib_with_inner(cfg)
    f = _field(fib.model, cfg.get("field", {}), cfg.get("seed", 0))
    cut = default_cutoffs(fib, margin)
    g = average(fib, f, cut)
    mid = middle_regions(fib, margin)
    recs = []
    for c in fib.charts:
        lab = fib.labels(c.id)
        vp = fib.inner_regions[c.id]
        spread = 0.0
        if vp.any():
            ls = lab[vp]
            vals = g[vp]
            for l in np.unique(ls):
                v = vals[ls == l]
                spread = max(spread, float(v.max() - v.min()))
        recs.append({"chart": c.id, "invariance_spread": spread, "inner_sites": int(vp.sum()),
                     "middle_sites": int(mid[c.id].sum())})
    # averaging only moves mass along fibers of the charts
    reach = f != 0
    for c in reversed(fib.charts):
        reach = reach | saturate(reach & c.region, fib.labels(c.id))
    support_ok = bool(not np.any((g != 0) & ~reach))
    recs.append({"min_in": float(f.min()), "max_in": float(f.max()), "min_out": float(g.min()),
                 "max_out": float(g.max()),
                 "sandwich": bool(g.min() >= f.min() - 1e-12 and g.max() <= f.max() + 1e-12),
                 "support_ok": support_ok})
    return recs, EXIT_OK, []


def cmd_pou(cfg: ExperimentConfig) -> Result:
    fib, margin = _fib_with_inner(cfg)
    rho = admissible_partition_of_unity(fib, default_bump_seeds(fib), default_cutoffs(fib, margin))
    total = sum(r * r for r in rho.values())
    recs = [{"chart": k, "support_sites": int((v > 0).sum()), "max": float(v.max())} for k, v in rho.items()]
    recs.append({"sum_squares_residual": float(np.max(np.abs(total - 1)))})
    return recs, EXIT_OK, []


def cmd_goodcover(cfg: ExperimentConfig) -> Result:
    spec = cfg.require("goodcover")
    model = build_grid(spec["grid"])
    subs = tuple(FiberSubgroup(tuple(tuple(g) for g in s), model.torus_dims) if s else
                 FiberSubgroup.trivial(model.torus_dims) for s in spec["subgroups"])
    per = np.full(model.shape, spec.get("default", len(subs) - 1), dtype=np.int64)
    for st in spec["strata"]:
        per[model.box(st["base"])] = st["subgroup"]
    stab = StabilizerAssignment(subs, per)
    cover = good_open_cover(model, stab, spec.get("margin", 1))
    checks = check_good_cover(model, stab, cover)
    recs = [{"subgroup": i, "sites": int(v.sum())} for i, v in cover.items()]
    recs.append(checks)
    return recs, EXIT_OK, []


def _solver(cfg):
    s = cfg.get("solver", {})
    return s.get("gap_floor", GAP_FLOOR), s.get("k"), s.get("method", "auto")


def _family(model):
    if isinstance(model, CylinderModel):
        return assemble_cylinder(model)
    return assemble_disc(model)


def cmd_spectrum(cfg: ExperimentConfig) -> Result:
    model = build_model(cfg.require("model"))
    _, k, method = _solver(cfg)
    recs, plot = [], []
    if isinstance(model, FlatTorusFiber):
        mb = cfg.require("model", "mode_bound")
        spec = torus_spectrum(model, max(mb, 1))
        for lam, e, o in spec.entries:
            recs.append({"lambda": lam, "even_mult": e, "odd_mult": o})
            plot.append((len(plot), lam))
        return recs, EXIT_OK, plot
    fam = _family(model)
    allv = []
    for m, op in zip(fam.modes, fam.ops):
        s = low_spectrum(op, k if k is None else min(k, op.dimension), method)
        for v, e in zip(s.values.tolist(), s.even.tolist()):
            recs.append({"mode": m, "lambda": v, "parity": "even" if e else "odd"})
            allv.append(v)
    plot = list(enumerate(sorted(allv)))
    return recs, EXIT_OK, plot


def cmd_index(cfg: ExperimentConfig) -> Result:
    spec = cfg.require("model")
    model = build_model(spec)
    if isinstance(model, FlatTorusFiber):
        raise ConfigError("index needs a cylinder or disc model")
    gap, k, method = _solver(cfg)
    rep = graded_index(_family(model), gap_floor=gap, k=k, method=method)
    rec = rep.to_record()
    rec["t"] = model.t
    rec["tie_at_cut"] = rep.tie_at_cut
    plot = list(enumerate(rep.eigen_head))
    return [rec], EXIT_OK if rep.reliable else EXIT_UNRELIABLE, plot


def cmd_deform_scan(cfg: ExperimentConfig) -> Result:
    model = build_model(cfg.require("model"))
    ts = cfg.require("solver", "t_values")
    gap, _, _ = _solver(cfg)
    res = deformation_scan(model, ts, gap)
    recs = [r.to_record() for r in res.reports]
    recs.append({"t_star": res.t_star, "consistent": res.consistent})
    code = EXIT_OK if res.t_star is not None else EXIT_UNRELIABLE
    return recs, code, []


def cmd_excision(cfg: ExperimentConfig) -> Result:
    model = build_model(cfg.require("model"))
    if not isinstance(model, CylinderModel):
        raise ConfigError("excision needs a cylinder model")
    gap, _, _ = _solver(cfg)
    out = excision_sum(model, [tuple(w) for w in cfg.require("windows")], gap)
    recs = [dict(p) for p in out["parts"]]
    recs.append({"global": out["global"], "sum": out["sum"], "equal": out["equal"], "reliable": out["reliable"]})
    return recs, EXIT_OK if out["reliable"] else EXIT_UNRELIABLE, []


def cmd_product(cfg: ExperimentConfig) -> Result:
    a = build_model(cfg.require("model"))
    b = build_model(cfg.require("model_b"), "model_b")
    s = cfg.get("solver", {})
    out = product_check(a, b, fiber_modes=s.get("fiber_modes", 3), pair_k=s.get("pair_k", 6),
                        gap_floor=s.get("gap_floor", GAP_FLOOR))
    return [out], EXIT_OK if out["reliable"] else EXIT_UNRELIABLE, []


def cmd_calculus(cfg: ExperimentConfig) -> Result:
    spec = cfg.require("calculus")
    bound = spec["bound"]
    table = solve(generate_system(bound, tuple(spec.get("facts", ("triangle", "square")))), bound)
    if not table.consistent:
        return [{"consistent": False, "witness": [str(r) for r in table.witness]}], EXIT_OK, []
    if table.free:
        recs = [{"kind": s[0], "a": s[1], "b": s[2], "value": None,
                 "general": {"constant": str(c), "terms": {f"{t[0]}({t[1]},{t[2]})": str(v) for t, v in dep.items()}}}
                for s, (c, dep) in table.general.items()]
        recs.append({"consistent": True, "unique": False,
                     "free": [f"{t[0]}({t[1]},{t[2]})" for t in table.free]})
        return recs, EXIT_OK, []
    return table.to_records(), EXIT_OK, []


def _base(cfg: ExperimentConfig):
    geo = cfg.require("geometry")
    if "strip" in geo:
        s = geo["strip"]
        return QuotientStrip(s["a"], s["b"], s["c"])
    if "polygon" in geo:
        return polygon_from_config(geo["polygon"])
    raise ConfigError("geometry needs a polygon or a strip")


def cmd_bs_count(cfg: ExperimentConfig) -> Result:
    base = _base(cfg)
    inv, plan = inventory_for(base)
    recs = inv.to_records()
    summary = {"count": inv.count(), "strata": {str(k): v for k, v in inv.by_stratum().items()},
               "deleted": len(plan.deleted), "windows": len(plan.windows)}
    if isinstance(base, QuotientStrip):
        summary["formula"] = base.formula()
    else:
        from .bsgeometry import pick_oracle
        summary["pick"] = pick_oracle(base)
    return recs + [summary], EXIT_OK, []


def cmd_rr(cfg: ExperimentConfig) -> Result:
    base = _base(cfg)
    inv, _ = inventory_for(base)
    bound = cfg.get("geometry", {}).get("bound", 4)
    table = solve(generate_system(bound), bound)
    total = rr_total(inv, table)
    return [{"rr_total": total, "bs_count": inv.count(), "equal": total == inv.count()}], EXIT_OK, []


COMMANDS: dict[str, Callable[[ExperimentConfig], Result]] = {
    "fibration-check": cmd_fibration_check,
    "average": cmd_average,
    "pou": cmd_pou,
    "goodcover": cmd_goodcover,
    "spectrum": cmd_spectrum,
    "index": cmd_index,
    "deform-scan": cmd_deform_scan,
    "excision": cmd_excision,
    "product": cmd_product,
    "calculus": cmd_calculus,
    "bs-count": cmd_bs_count,
    "rr": cmd_rr,
}


# ---------------------------------------------------------------------------
# output


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, float) and not np.isfinite(v):
        return str(v)
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def format_records(records: list[dict], fmt: str) -> str:
    if fmt == "json":
        return "".join(json.dumps(_jsonable(r), sort_keys=True) + "\n" for r in records)
    keys: list[str] = []
    for r in records:
        for k in r:
            if k not in keys:
                keys.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for r in records:
        w.writerow({k: json.dumps(_jsonable(v)) if isinstance(v, (dict, list, tuple)) else _jsonable(v)
                    for k, v in r.items()})
    return buf.getvalue()


def run(command: str, cfg: ExperimentConfig) -> tuple[list[dict], int, list]:
    """Dispatch one command; records are stamped with the command, digest and version."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command}")
    threads = cfg.get("threads")
    if threads:
        from threadpoolctl import threadpool_limits
        with threadpool_limits(threads):
            recs, code, plot = COMMANDS[command](cfg)
    else:
        recs, code, plot = COMMANDS[command](cfg)
    stamp = {"command": command, "config_digest": cfg.digest, "version": __version__}
    return [{**r, **stamp} for r in recs], code, plot


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="locindex", description=__doc__)
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("config", help="TOML experiment config")
    ap.add_argument("--out", help="write records here instead of stdout")
    ap.add_argument("--format", choices=["json", "csv"], default=None)
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--plot-data", dest="plot_data", help="two-column spectrum dump for gnuplot")
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.threads:
            cfg.data["threads"] = args.threads
        fmt = args.format or cfg.get("output", {}).get("format", "json")
        recs, code, plot = run(args.command, cfg)
    except (ConfigError, ConstructionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalNonConvergence as e:
        print(f"non-convergence: {e}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except UnreliableGap as e:
        print(f"unreliable gap: {e}", file=sys.stderr)
        return EXIT_UNRELIABLE
    text = format_records(recs, fmt)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.plot_data:
        with open(args.plot_data, "w", encoding="utf-8") as fh:
            fh.write("# index lambda\n")
            for i, v in plot:
                fh.write(f"{i} {v:.17g}\n")
    if code == EXIT_UNRELIABLE:
        print("unreliable gap: index refused", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
