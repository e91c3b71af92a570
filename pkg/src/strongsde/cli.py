"""Command-line front end: ``strongsde classify | rates | verify``."""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import error_lab, sde_model

SCHEMA_VERSION = 1
SUITES = ("identities", "coupling", "gaussian", "oracle")
_EQ_KEYS = {"catalog", "linear", "x0", "T", "params", "localize"}
_EXP_KEYS = {"scheme", "metric", "n_grid", "M", "target", "band", "k_ref",
             "kref_factor", "interpolation", "name"}


class ConfigError(ValueError):
    """A configuration file is malformed; ``line`` points into the file."""

    def __init__(self, message, source="<config>", line=None):
        self.source = source
        self.line = line
        where = f"{source}:{line}" if line else source
        super().__init__(f"{where}: {message}")


def _line_of(text, key):
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return i
    return None


def packaged_configs():
    root = resources.files("strongsde") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir()
                  if p.name.endswith(".json"))


def load_config(ref: str):
    """Load a config from a path or a packaged name; returns (dict, text, src)."""
    path = Path(ref)
    if path.exists():
        text, src = path.read_text(), str(path)
    else:
        name = ref[:-5] if ref.endswith(".json") else ref
        res = resources.files("strongsde") / "configs" / f"{name}.json"
        if not res.is_file():
            raise ConfigError(f"no such file or packaged config "
                              f"(packaged: {', '.join(packaged_configs())})",
                              ref)
        text, src = res.read_text(), f"packaged:{name}"
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{e.msg} (column {e.colno})", src, e.lineno)
    if not isinstance(cfg, dict):
        raise ConfigError("top level must be an object", src, 1)
    ver = cfg.get("schema_version")
    if ver != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got "
                          f"{ver!r}", src, _line_of(text, "schema_version"))
    return cfg, text, src


def build_equation(eq, text="", src="<config>"):
    if not isinstance(eq, dict) or ("catalog" in eq) == ("linear" in eq):
        raise ConfigError("'equation' needs either a 'catalog' name or "
                          "'linear' coefficients [a0, a1, b0, b1]", src,
                          _line_of(text, "equation"))
    bad = set(eq) - _EQ_KEYS
    if bad:
        k = sorted(bad)[0]
        raise ConfigError(f"unknown equation key {k!r}", src,
                          _line_of(text, k))
    try:
        if "linear" in eq:
            spec = sde_model.linear_sde(*eq["linear"], x0=eq.get("x0", 1.0),
                                        T=eq.get("T", 1.0))
        else:
            spec = sde_model.catalog(eq["catalog"], eq.get("params"))
        if eq.get("localize"):
            iv = eq["localize"]
            spec = sde_model.localize(spec, iv["I1"], iv["I2"], iv["I3"])
    except (ValueError, KeyError, TypeError) as e:
        raise ConfigError(str(e), src, _line_of(
            text, "linear" if "linear" in eq else "catalog"))
    return spec


def _metric(m, text, src):
    try:
        return error_lab.ErrorMetric(m.get("kind", "endpoint"),
                                     float(m.get("p", 1.0)),
                                     int(m.get("resolution",
                                               error_lab.DEFAULT_RESOLUTION)))
    except (ValueError, AttributeError) as e:
        raise ConfigError(str(e), src, _line_of(text, "metric"))


def resolve_rates(cfg, text, src, seed=None):
    """Fully resolved experiment plan (a JSON-serializable dict)."""
    exps = cfg.get("experiments")
    if not isinstance(exps, list) or not exps:
        raise ConfigError("'experiments' must be a non-empty list", src,
                          _line_of(text, "experiments"))
    build_equation(cfg.get("equation"), text, src)
    plan = {"schema_version": SCHEMA_VERSION, "command": "rates",
            "equation": cfg["equation"],
            "seed": int(cfg.get("seed", 0) if seed is None else seed),
            "experiments": []}
    for e in exps:
        bad = set(e) - _EXP_KEYS
        if bad:
            k = sorted(bad)[0]
            raise ConfigError(f"unknown experiment key {k!r}", src,
                              _line_of(text, k))
        for key in ("scheme", "n_grid", "M"):
            if key not in e:
                raise ConfigError(f"experiment needs {key!r}", src,
                                  _line_of(text, "experiments"))
        m = _metric(e.get("metric", {}), text, src)
        plan["experiments"].append({
            "name": e.get("name") or e.get("target") or e["scheme"],
            "scheme": e["scheme"],
            "metric": {"kind": m.kind, "p": m.p, "resolution": m.resolution},
            "n_grid": [int(n) for n in e["n_grid"]], "M": int(e["M"]),
            "target": e.get("target"), "band": e.get("band"),
            "k_ref": e.get("k_ref"),
            "kref_factor": int(e.get("kref_factor",
                                     error_lab.DEFAULT_KREF_FACTOR)),
            "interpolation": e.get("interpolation", "linear"),
        })
    return plan


def run_rates(plan, jobs=1):
    spec = build_equation(plan["equation"])
    reports = []
    for e in plan["experiments"]:
        m = e["metric"]
        metric = error_lab.ErrorMetric(m["kind"], m["p"], m["resolution"])
        reports.append(error_lab.rate_experiment(
            spec, e["scheme"], metric, e["n_grid"], e["M"], plan["seed"],
            target=e["target"], band=e["band"], k_ref=e["k_ref"],
            kref_factor=e["kref_factor"], interpolation=e["interpolation"],
            jobs=jobs, name=e["name"], config={"plan": plan, "entry": e}))
    return reports


def classify(cfg, text="", src="<config>"):
    spec = build_equation(cfg.get("equation"), text, src)
    I = cfg.get("interval")
    if not (isinstance(I, list) and len(I) == 2):
        raise ConfigError("'interval' must be [lo, hi]", src,
                          _line_of(text, "interval"))
    theorems = cfg.get("theorems", list(sde_model.THEOREM_IDS))
    try:
        return [sde_model.check_conditions(spec, th, I,
                                           float(cfg.get("t0", 0.0)))
                for th in theorems]
    except ValueError as e:
        raise ConfigError(str(e), src, _line_of(text, "interval"))


# ---------------------------------------------------------------------------
# verify suites


def _suite_identities(seed):
    from . import proof_lab
    spec = sde_model.localize(sde_model.catalog("quintic"),
                              *LOCALIZED_QUINTIC)
    ok, worst, n = proof_lab.identity_suite(spec, (8, 32, 128), 1000, seed)
    return ok, f"aux endpoint identity on {n} runs, worst relative {worst:.2e}"


def _suite_coupling(seed):
    from . import localization_lab as ll
    base = sde_model.catalog("quintic")
    spec = sde_model.localize(base, *COUPLING_WINDOW)
    b = ll.coupled_batch(base, spec, COUPLING_WINDOW[2], "euler", 64, 1000,
                         seed)
    c = b.counts()
    ok = (c["agree_through_exit_minus_one"] == c["paths"]
          and c["stayed_and_full_agreement"] == c["stayed"]
          and c["full_agreement_unexplained"] == 0)
    return ok, json.dumps(c)


def _suite_gaussian(seed):
    from . import prob_tools as pt
    fails = 0
    for eps in (0.1, 0.5, 0.9):
        for sigma in (1.0, 2.0):
            for mu in (0.0, 3.0):
                fails += not pt.anderson_tail_check(mu, sigma, eps, M=10 ** 4,
                                                    seed=seed).passed
    found = [pt.largest_passing_constant(
        pt.bridge_l1_check, [0.01, 0.02, 0.05, 0.1, 0.2, 0.5], k=k,
        delta=1.0, eps=0.1, M=2000, seed=seed)[0] for k in (8, 32)]
    ok = fails == 0 and all(c is not None for c in found)
    return ok, f"anderson failures {fails}/12; bridge constants {found}"


def oracle_statistics(seed=0, draws=10 ** 5, k=4):
    """Bridge and query-order statistics against their exact values.

    Returns ``[(name, estimate, exact, se)]`` for the bridge midpoint
    variance ``h/4``, the span time-integral variance ``h**3/12`` and the
    covariance of ``W(s)`` and ``W(t)`` queried in the order ``t, s``.
    """
    from .brownian import PathState
    h = 1.0 / k
    s_, t_ = 0.3, 0.7
    mid = np.empty(draws)
    integ = np.empty(draws)
    ws = np.empty(draws)
    wt = np.empty(draws)
    for r in range(draws):
        p = PathState(seed, r)
        p.evaluate(h)
        integ[r] = p.span_time_integral(0.0, h)
        q = PathState(seed + 1, r)
        wq = q.evaluate(h)
        mid[r] = q.evaluate(h / 2) - 0.5 * wq
        wt[r] = p.evaluate(t_)
        ws[r] = p.evaluate(s_)
    out = []
    for name, x, exact in (("bridge midpoint variance", mid, h / 4),
                           ("span integral variance", integ, h ** 3 / 12)):
        v = float(np.var(x, ddof=1))
        out.append((name, v, exact, exact * math.sqrt(2.0 / (draws - 1))))
    prod = ws * wt
    out.append(("reverse-order covariance", float(prod.mean()), min(s_, t_),
                float(prod.std(ddof=1) / math.sqrt(draws))))
    return out


def _suite_oracle(seed):
    rows = oracle_statistics(seed)
    ok = all(abs(v - e) <= 3 * se for _, v, e, se in rows)
    return ok, "; ".join(f"{n} {v:.4e} vs {e:.4e} (se {se:.1e})"
                         for n, v, e, se in rows)


# Windows used by the packaged suites; wide cut-off transitions keep the
# localized derivatives moderate.
LOCALIZED_QUINTIC = ((0.05, 3.0), (0.35, 2.2), (0.65, 1.6))
COUPLING_WINDOW = ((0.02, 4.0), (0.2, 3.0), (0.4, 2.2))

_SUITES = {"identities": _suite_identities, "coupling": _suite_coupling,
           "gaussian": _suite_gaussian, "oracle": _suite_oracle}


# ---------------------------------------------------------------------------
# entry point


def _parser():
    p = argparse.ArgumentParser(prog="strongsde", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required,
                        help="JSON config path or packaged config name")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--out", type=Path, default=None)
        sp.add_argument("--dry-run", action="store_true")

    common(sub.add_parser("classify", help="check theorem hypotheses"))
    common(sub.add_parser("rates", help="run convergence experiments"))
    v = sub.add_parser("verify", help="run property suites")
    v.add_argument("suite", choices=SUITES + ("all",))
    common(v, config_required=False)
    sub.add_parser("configs", help="list packaged configs")
    return p


def _write(out: Path, name: str, content: str):
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(content)


def _envelope(command, seed, payload, config):
    from . import __version__
    return {"schema_version": SCHEMA_VERSION, "command": command,
            "package_version": __version__, "seed": seed, "config": config,
            "created": time.strftime("%Y-%m-%dT%H:%M:%S"), **payload}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.command == "configs":
        for name in packaged_configs():
            print(name)
        return 0

    if args.command == "verify":
        seed = 0 if args.seed is None else args.seed
        names = SUITES if args.suite == "all" else (args.suite,)
        if args.dry_run:
            print(json.dumps({"suites": list(names), "seed": seed}))
            return 0
        results = {}
        for name in names:
            ok, detail = _SUITES[name](seed)
            results[name] = {"passed": bool(ok), "detail": detail}
            print(f"{name}: {'PASS' if ok else 'FAIL'}  {detail}")
        if args.out:
            _write(args.out, "verify.json", json.dumps(
                _envelope("verify", seed, {"results": results}, None),
                indent=2))
        return 0 if all(r["passed"] for r in results.values()) else 1

    cfg, text, src = load_config(args.config)
    if args.command == "classify":
        reports = classify(cfg, text, src)
        if args.dry_run:
            print(json.dumps(cfg, indent=2))
            return 0
        for r in reports:
            gap = "" if r.lie_gap_min is None else \
                f" min|gap|={r.lie_gap_min:.3g}"
            print(f"{r.spec_name} {r.theorem_id}: {r.verdict} "
                  f"(min|b|={r.b_min:.3g}{gap})")
        if args.out:
            _write(args.out, "classify.json", json.dumps(_envelope(
                "classify", None, {"reports": [r.to_dict() for r in reports]},
                cfg), indent=2, default=error_lab._jsonable))
        return 0

    plan = resolve_rates(cfg, text, src, args.seed)
    if args.dry_run:
        print(json.dumps(plan, indent=2))
        return 0
    reports = run_rates(plan, args.jobs)
    for r in reports:
        s = r.corrected_slope if r.log_power else r.slope
        print(f"{r.name}: slope {s:.3f} band {list(r.band)} "
              f"gate {r.gate_ratio if r.gate_ratio is None else round(r.gate_ratio, 1)} "
              f"-> {'PASS' if r.passed else 'FAIL'}")
    if args.out:
        _write(args.out, "rates.json", json.dumps(_envelope(
            "rates", plan["seed"], {"reports": [r.to_dict() for r in reports]},
            plan), indent=2, default=error_lab._jsonable))
        for r in reports:
            _write(args.out, f"{r.name}.csv", r.to_csv())
            _write(args.out, f"{r.name}.dat", r.to_dat())
    return 0 if all(r.passed for r in reports) else 1


if __name__ == "__main__":
    sys.exit(main())
