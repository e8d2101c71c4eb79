"""Command line entry point: ``cuspidal run | describe | list-manifolds``.

Configuration is a YAML mapping (schema in the README); command line flags
override individual fields.  ``run`` writes one CSV per suite plus
``summary.json`` into the output directory and exits with status 1 if any
check fails, 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from .geometry_core import GeometryError, ManifoldModel
from .manifolds import PRESETS, ManifoldConfig, preset
from .suites import SUITE_NAMES, ExperimentConfig, SuiteResult, run_suite

__all__ = ["main", "load_config", "ConfigError", "CSV_SCHEMA_VERSION", "describe_model"]

CSV_SCHEMA_VERSION = 1

# config key -> (ExperimentConfig attribute, kind)
_CONFIG_FIELDS = {
    "manifold": ("manifold", "manifold"),
    "suite": ("suite", "str"),
    "mesh": ("mesh", "intlist"),
    "lambda": ("lambdas", "floatlist"),
    "p": ("ps", "floatlist"),
    "k": ("ks", "intlist"),
    "samples": ("samples", "int"),
    "harness_samples": ("harness_samples", "int"),
    "seed": ("seed", "int"),
    "output": ("output", "str"),
}


class ConfigError(GeometryError):
    """Configuration problem, with the offending source line when known."""

    def __init__(self, msg: str, source: str | None = None, line: int | None = None, field: str | None = None):
        where = source or "<config>"
        if line is not None:
            where += f":{line}"
        if field:
            where += f": field '{field}'"
        super().__init__(f"{where}: {msg}")


def _coerce(kind: str, value, key: str):
    def bad(expect):
        return ValueError(f"expected {expect}, got {value!r}")

    if kind == "str":
        if not isinstance(value, str):
            raise bad("a string")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad("an integer")
        return value
    if kind in ("intlist", "floatlist"):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = [value]
        if not isinstance(value, list) or not value:
            raise bad("a non-empty list")
        out = []
        for v in value:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise bad("numbers")
            if kind == "intlist" and int(v) != v:
                raise bad("integers")
            out.append(int(v) if kind == "intlist" else float(v))
        return out
    raise AssertionError(kind)


def _manifold_from(value) -> tuple[ManifoldConfig, str | None]:
    """A preset name, or a mapping with optional ``preset`` plus field overrides."""
    if isinstance(value, str):
        return preset(value), value
    if not isinstance(value, dict):
        raise ValueError("expected a preset name or a mapping")
    data = dict(value)
    name = data.pop("preset", None)
    if name is None:
        return ManifoldConfig.from_dict(data), None
    base = preset(name)
    return ManifoldConfig.from_dict({**base.to_dict(), **data}), name


def _key_lines(root) -> dict[str, int]:
    lines = {}
    if isinstance(root, yaml.MappingNode):
        for k, _ in root.value:
            lines[str(k.value)] = k.start_mark.line + 1
    return lines


def load_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse a YAML config into an :class:`ExperimentConfig` with line diagnostics."""
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"parse error: {getattr(exc, 'problem', None) or exc}", source, line) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", source, 1)
    lines = _key_lines(root)
    cfg = ExperimentConfig()
    for key, value in data.items():
        line = lines.get(str(key))
        if key not in _CONFIG_FIELDS:
            raise ConfigError(f"unknown field; allowed: {', '.join(_CONFIG_FIELDS)}", source, line, str(key))
        attr, kind = _CONFIG_FIELDS[key]
        try:
            if kind == "manifold":
                mcfg, name = _manifold_from(value)
                mcfg.validate()
                cfg = replace(cfg, manifold=mcfg, manifold_name=name)
            else:
                cfg = replace(cfg, **{attr: _coerce(kind, value, key)})
        except (ValueError, TypeError, GeometryError) as exc:
            raise ConfigError(str(exc), source, line, key) from None
    if "manifold" not in data:
        cfg = replace(cfg, manifold=preset(cfg.manifold_name))
    try:
        cfg.validate()
    except GeometryError as exc:
        raise ConfigError(str(exc), source) from None
    return cfg


# ---------------------------------------------------------------------------
# argument handling


def _csv_numbers(kind: str):
    def parse(text: str):
        try:
            return [int(t) if kind == "int" else float(t) for t in text.split(",") if t.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected comma-separated {kind}s, got {text!r}") from None

    return parse


def _assignment(text: str):
    key, sep, val = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return key.strip(), yaml.safe_load(val)


def _add_manifold_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML experiment config")
    p.add_argument("--manifold", help="preset name (see list-manifolds)")
    p.add_argument("--alpha", type=float, help="cusp exponent override")
    p.add_argument("--J-max", dest="J_max", type=int, help="deepest dyadic shell override")
    p.add_argument("--set", dest="sets", action="append", type=_assignment, default=[], metavar="KEY=VALUE",
                   help="override any manifold field, e.g. --set base=sphere")


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cuspidal", description="Weighted function spaces on singular manifolds.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run verification suites and write reports")
    _add_manifold_flags(run)
    run.add_argument("--suite", help=f"one of all, {', '.join(SUITE_NAMES)}")
    run.add_argument("--mesh", type=_csv_numbers("int"), help="mesh ladder, e.g. 16,32,64")
    run.add_argument("--lambda", dest="lambdas", type=_csv_numbers("float"), help="weights, e.g. --lambda=-1,0,1.5")
    run.add_argument("--p", dest="ps", type=_csv_numbers("float"), help="integrability exponents")
    run.add_argument("--k", dest="ks", type=_csv_numbers("int"), help="derivative orders")
    run.add_argument("--samples", type=int)
    run.add_argument("--harness-samples", dest="harness_samples", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--output", "-o", help="report directory")
    run.add_argument("--verbose", "-v", action="store_true", help="print PASS lines too")
    desc = sub.add_parser("describe", help="summarize a manifold model")
    _add_manifold_flags(desc)
    sub.add_parser("list-manifolds", help="list the named presets")
    return ap


def _resolve(args) -> ExperimentConfig:
    if args.config is not None:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror}", str(args.config)) from None
        cfg = load_config(text, str(args.config))
    else:
        cfg = ExperimentConfig()
        cfg = replace(cfg, manifold=preset(cfg.manifold_name))
    mcfg, name = cfg.manifold, cfg.manifold_name
    if args.manifold:
        mcfg, name = preset(args.manifold), args.manifold
    over = dict(args.sets)
    if args.alpha is not None:
        over["alpha"] = args.alpha
    if args.J_max is not None:
        over["J_max"] = args.J_max
    if over:
        try:
            mcfg = ManifoldConfig.from_dict({**mcfg.to_dict(), **over})
        except TypeError as exc:
            raise ConfigError(str(exc), field="manifold") from None
    cfg = replace(cfg, manifold=mcfg, manifold_name=name)
    for attr in ("suite", "mesh", "lambdas", "ps", "ks", "samples", "harness_samples", "seed", "output"):
        val = getattr(args, attr, None)
        if val is not None:
            cfg = replace(cfg, **{attr: val})
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# output


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def _json_safe(v):
    if isinstance(v, dict):
        return {str(k): _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else _cell(v)
    return v


def render_csv(res: SuiteResult, model_name: str) -> str:
    cols: list[str] = []
    for r in res.rows:
        for c in r:
            if c not in cols:
                cols.append(c)
    buf = io.StringIO()
    buf.write(f"# cuspidal csv schema v{CSV_SCHEMA_VERSION} suite={res.suite} manifold={model_name} status={res.status}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in res.rows:
        w.writerow([_cell(r.get(c, "")) for c in cols])
    return buf.getvalue()


def _summary(cfg: ExperimentConfig, model: ManifoldModel, results: list[SuiteResult]) -> str:
    doc = {
        "schema": CSV_SCHEMA_VERSION,
        "manifold": {"preset": cfg.manifold_name, **cfg.manifold.to_dict()},
        "model": model.name,
        "config": {"suite": cfg.suite, "mesh": cfg.mesh, "lambda": cfg.lambdas, "p": cfg.ps, "k": cfg.ks,
                   "samples": cfg.samples, "harness_samples": cfg.harness_samples, "seed": cfg.seed},
        "suites": [
            {
                "suite": r.suite,
                "status": r.status,
                "skipped": r.skipped,
                "checks": [{"name": c.name, "value": c.value, "op": c.op, "tol": c.tol, "passed": c.passed} for c in r.checks],
            }
            for r in results
        ],
        "passed": all(r.passed for r in results),
    }
    return json.dumps(_json_safe(doc), indent=2, sort_keys=True) + "\n"


def describe_model(model: ManifoldModel) -> dict:
    rho = [c.center_rho for c in model.charts]
    shells = model.shells()
    out = {
        "name": model.name,
        "family": model.metadata.get("family", "custom"),
        "dimension": model.dim,
        "charts": len(model.charts),
        "boundary charts": len(model.boundary_charts),
        "multiplicity": model.measure_multiplicity(),
        "design multiplicity": model.design_multiplicity,
        "rho range": (min(rho), max(rho)),
        "shells": len(shells),
    }
    spec = model.metadata.get("spec")
    if spec is not None:
        out["J_max"] = spec["J_max"]
    return out


def _cmd_describe(args) -> int:
    cfg = _resolve(args)
    info = describe_model(cfg.manifold.build())
    width = max(len(k) for k in info)
    for k, v in info.items():
        if k == "rho range":
            v = f"[{v[0]:.6g}, {v[1]:.6g}]"
        print(f"{k.ljust(width)}  {v}")
    return 0


def _cmd_list() -> int:
    width = max(len(n) for n in PRESETS)
    for name, (_, text) in PRESETS.items():
        print(f"{name.ljust(width)}  {text}")
    return 0


def _cmd_run(args) -> int:
    cfg = _resolve(args)
    model = cfg.manifold.build()
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for name in cfg.suites():
        res = run_suite(name, model, cfg)
        results.append(res)
        (out / f"{name}.csv").write_text(render_csv(res, model.name))
        if res.skipped:
            print(f"SKIP suite={name} reason={res.skipped!r}")
        for c in res.checks:
            if args.verbose or not c.passed:
                print(c.line(name))
        print(f"suite={name} status={res.status} checks={len(res.checks)} failed={sum(not c.passed for c in res.checks)}")
    (out / "summary.json").write_text(_summary(cfg, model, results))
    return 0 if all(r.passed for r in results) else 1


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "list-manifolds":
            return _cmd_list()
        if args.command == "describe":
            return _cmd_describe(args)
        return _cmd_run(args)
    except GeometryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
