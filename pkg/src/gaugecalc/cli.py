"""Batch front-end: parse experiment configs, dispatch to modules, emit tables.

Exit codes: 0 pass/convergence, 1 checked failure, 2 usage or config error.
Flags override values from --config (a flat JSON object); outputs are
written atomically and deterministically (same config + seed, same bytes,
independent of GAUGECALC_THREADS).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from fractions import Fraction

from .calculus import (
    check_change_of_variables,
    check_interval_additivity,
    check_monotone,
    check_parts,
    constancy_check,
    mct_experiment,
    suite_to_csv_rows,
)
from .funcspace import IntervalFunction, ParseError, PointFunction, SuperadditiveFn
from .hk import (
    cumulative,
    delta_variation_bruteforce,
    delta_variation_dp,
    hk_integrate,
    indefinite_hk,
    residual_cell_fn,
    table_to_csv_rows,
    volume_power_cell_fn,
)
from .intervals import Box, Gauge
from .mc import (
    CertificationError,
    ControlFunction1D,
    NoGaugeError,
    chebyshev_points,
    control_from_gauges,
    gauge_from_control,
    verify_mc,
)

USAGE_ERROR = 2
CHECK_FAILED = 1


class ConfigError(Exception):
    pass


def _parse_box(text) -> Box:
    if isinstance(text, Box):
        return text
    try:
        data = json.loads(text) if isinstance(text, str) else text
        return Box.from_json(data)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"invalid box {text!r}: {e}") from e


def _resolve_G(name, box: Box):
    if name in (None, "", "length", "volume"):
        return IntervalFunction.volume(box.dim)
    if isinstance(name, str) and name.startswith("heaviside_"):
        return IntervalFunction.heaviside(name[len("heaviside_"):])
    return IntervalFunction.from_generator(PointFunction.resolve(name))


def _write_atomic(path: str, data: str):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".gaugecalc-")
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def _emit(cfg, rows, json_obj):
    fmt = cfg.get("format", "csv")
    text = (
        json.dumps(json_obj, sort_keys=True, indent=2) + "\n"
        if fmt == "json"
        else _csv_text(rows)
    )
    out = cfg.get("out")
    if out:
        _write_atomic(out, text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Subcommands


def run_integrate(cfg) -> int:
    box = _parse_box(cfg.get("box", "[0,1]"))
    f = PointFunction.resolve(cfg["f"])
    G = _resolve_G(cfg.get("G"), box)
    result = hk_integrate(
        f, G, box, tol=cfg.get("tol", 1e-6), budget=int(cfg.get("budget", 10**7))
    )
    rows = [
        ["value", "error_estimate", "evaluations", "max_depth", "converged"],
        [repr(result.value), repr(result.error_estimate),
         str(result.evaluations), str(result.max_depth), str(result.converged)],
    ]
    _emit(cfg, rows, json.loads(result.to_json()))
    print(f"integral = {result.value!r} (converged={result.converged})",
          file=sys.stderr)
    return 0 if result.converged else CHECK_FAILED


def run_indefinite(cfg) -> int:
    box = _parse_box(cfg.get("box", "[0,1]"))
    table = indefinite_hk(
        PointFunction.resolve(cfg["f"]),
        _resolve_G(cfg.get("G"), box),
        box,
        depth=int(cfg.get("depth", 4)),
        tol=cfg.get("tol", 1e-6),
        budget=int(cfg.get("budget", 10**7)),
    )
    rows = table_to_csv_rows(table)
    _emit(cfg, rows, {
        "cells": {str(k): v for k, v in sorted(
            table.entries.items(), key=lambda kv: (-kv[0].volume, kv[0].intervals)
        )},
        "converged": table.result.converged,
    })
    return 0 if table.result.converged else CHECK_FAILED


def run_verify_mc(cfg) -> int:
    box = _parse_box(cfg.get("box", "[-1,1]"))
    (lo, hi), = box.intervals
    domain = (float(lo), float(hi))
    F = PointFunction.resolve(cfg["F"])
    f = PointFunction.resolve(cfg["f"])
    phi = ControlFunction1D.from_expr(cfg.get("phi", "x"), domain)
    if cfg.get("at") is not None:
        raw = cfg["at"]
        points = [float(Fraction(p)) for p in str(raw).split(",")]
    else:
        points = chebyshev_points(domain[0], domain[1], int(cfg.get("samples", 33)))
    verdict = verify_mc(F, f, phi, domain, points, tol=cfg.get("tol", 1e-3))
    _emit(cfg, verdict.to_csv_rows(), verdict.to_json_dict())
    for w in verdict.failures:
        print(f"fail at x={w.x}: q={w.q_last} ({w.reason})", file=sys.stderr)
    return 0 if verdict.passed else CHECK_FAILED


def run_variation(cfg) -> int:
    box = _parse_box(cfg.get("box", "[0,1]"))
    psi = volume_power_cell_fn(cfg.get("psi_c", 1.0), cfg.get("psi_p", 1))
    gauge = Gauge.constant(cfg.get("delta", 2.0))
    depth = int(cfg.get("depth", 4))
    dp_value = delta_variation_dp(psi, box, gauge, depth)
    rows = [["method", "value"], ["dp", repr(dp_value)]]
    payload = {"dp": dp_value}
    if cfg.get("grid"):
        grid = [Fraction(g) for g in str(cfg["grid"]).split(",")]
        bf_value = delta_variation_bruteforce(psi, box, gauge, grid)
        rows.append(["bruteforce", repr(bf_value)])
        payload["bruteforce"] = bf_value
    _emit(cfg, rows, payload)
    return 0


def run_convert(cfg) -> int:
    box = _parse_box(cfg.get("box", "[0,1]"))
    f = PointFunction.resolve(cfg.get("f", "2*x"))
    depth = int(cfg.get("depth", 10))
    table = indefinite_hk(f, None, box, depth=depth, tol=cfg.get("tol", 1e-10))
    G = IntervalFunction.volume(box.dim)
    direction = cfg.get("direction", "to-gauge")
    if direction == "to-gauge":
        eps = cfg.get("eps", 0.01)
        n = int(cfg.get("samples", 65))
        (lo, hi), = box.intervals
        samples = [lo + (hi - lo) * Fraction(i, n - 1) for i in range(n)]
        try:
            gauge = gauge_from_control(
                table, f, G, SuperadditiveFn.volume_power(1),
                eps, samples, depth, box,
            )
        except NoGaugeError as e:
            print(f"no gauge: {e}", file=sys.stderr)
            return CHECK_FAILED
        rows = [["x", "delta"]]
        for p, v in sorted(gauge.sample_values.items()):
            rows.append([repr(p[0]), repr(v)])
        _emit(cfg, rows, {"samples": {repr(k[0]): v for k, v in
                                      sorted(gauge.sample_values.items())}})
        return 0
    if direction == "to-control":
        K = int(cfg.get("K", 6))
        psi = residual_cell_fn(f, G, table)
        gauges = [Gauge.constant(2.0**-k) for k in range(1, K + 1)]
        try:
            phi = control_from_gauges(psi, gauges, box, depth, K=K)
        except CertificationError as e:
            print(f"certification failed: {e}", file=sys.stderr)
            return CHECK_FAILED
        rows = [["cell", "phi"]]
        for cell in sorted(phi.entries, key=lambda b: (-b.volume, b.intervals)):
            rows.append([str(cell), repr(phi.entries[cell])])
        _emit(cfg, rows, {"cells": {str(c): v for c, v in sorted(
            phi.entries.items(), key=lambda kv: (-kv[0].volume, kv[0].intervals))}})
        return 0
    raise ConfigError(f"unknown direction {direction!r}")


IDENTITY_PRESETS = {
    "parts": {
        "ones": dict(f="1", F="x", g="1", G="x", interval=(0, 1), tol=1e-6),
        "sin-x": dict(f="cos(x)", F="sin(x)", g="1", G="x", interval=(0, 1), tol=1e-6),
        "zero": dict(f="0", F="0", g="0", G="0", interval=(0, 1), tol=1e-6),
    },
    "change": {
        "square": dict(F="x^2", f="2*x", g="1", interval=(0, 1), tol=1e-6),
        "sqrt": dict(F="x^2", f="2*x", g="sqrt(x)", interval=(0, 1), tol=1e-6),
        "exp": dict(F="exp(x)", f="exp(x)", g="1/x", interval=(0, 1), tol=1e-6),
    },
    "additivity": {
        "const": dict(f="1", a="0", b="1", c="2", tol=1e-6),
        "inv-sqrt": dict(f="inv_sqrt", a="0", b="1/4", c="1", tol=1e-3),
        "hk": dict(f="hk_derivative", a="0", b="1/2", c="1", tol=1e-3),
    },
}


def run_identity(cfg) -> int:
    kind = cfg.get("kind")
    preset = cfg.get("preset")
    reports = []
    if kind in ("parts", "change", "additivity"):
        spec = IDENTITY_PRESETS[kind].get(preset)
        if spec is None and kind == "additivity" and cfg.get("f"):
            spec = dict(
                f=cfg["f"], a=cfg.get("a", "0"), b=cfg.get("b", "1/2"),
                c=cfg.get("c", "1"), tol=cfg.get("tol", 1e-6),
            )
        if spec is None:
            raise ConfigError(
                f"unknown preset {preset!r} for {kind} "
                f"(have {sorted(IDENTITY_PRESETS[kind])})"
            )
        if kind == "parts":
            reports.append(check_parts(
                spec["f"], spec["F"], spec["g"], spec["G"],
                spec["interval"], spec["tol"],
            ))
        elif kind == "change":
            reports.append(check_change_of_variables(
                spec["F"], spec["f"], spec["g"], spec["interval"], spec["tol"],
            ))
        else:
            reports.append(check_interval_additivity(
                spec["f"], spec["a"], spec["b"], spec["c"], spec["tol"],
            ))
        _emit(cfg, suite_to_csv_rows(reports),
              [r.to_json_dict() for r in reports])
        return 0 if all(r.passed for r in reports) else CHECK_FAILED
    if kind == "monotone":
        box = _parse_box(cfg.get("box", "[0,1]"))
        f = PointFunction.resolve(cfg.get("f", "2*x"))
        table = indefinite_hk(f, None, box, depth=int(cfg.get("depth", 6)),
                              tol=cfg.get("tol", 1e-8))
        (lo, hi), = box.intervals
        verdict = check_monotone(f=f, F_table=table,
                                 sample_points=chebyshev_points(float(lo), float(hi), 33))
        rows = [["precondition_ok", "passed"],
                [str(verdict.precondition_ok), str(verdict.passed)]]
        _emit(cfg, rows, {"precondition_ok": verdict.precondition_ok,
                          "passed": verdict.passed})
        return 0 if verdict.passed else CHECK_FAILED
    if kind == "constancy":
        box = _parse_box(cfg.get("box", "[0,1]"))
        f = PointFunction.resolve(cfg.get("f", "2*x"))
        depth = int(cfg.get("depth", 6))
        table = indefinite_hk(f, None, box, depth=depth, tol=cfg.get("tol", 1e-9))
        (lo, hi), = box.intervals
        F1 = cumulative(table, lo)
        F2 = cumulative(table, (lo + hi) / 2)
        n = 2**depth
        grid = [lo + (hi - lo) * Fraction(i, n) for i in range(n + 1)]
        report = constancy_check(F1, F2, grid)
        rows = [["deviation", "constant"],
                [repr(report.deviation), repr(report.constant)]]
        _emit(cfg, rows, {"deviation": report.deviation,
                          "constant": report.constant})
        return 0 if report.deviation <= cfg.get("dev_tol", 1e-6) else CHECK_FAILED
    raise ConfigError(f"unknown identity kind {kind!r}")


def _mct_family(preset: str, K: int):
    if preset == "min-inv-sqrt":
        def member(k):
            thr = Fraction(1, k * k)
            return PointFunction.from_expr(f"ite(x<{thr},{k},1/sqrt(x))")

        def anti(k):
            thr = Fraction(1, k * k)
            return PointFunction.from_expr(f"ite(x<{thr},{k}*x,2*sqrt(x)-1/{k})")

        return (
            member,
            PointFunction.builtin("inv_sqrt"),
            [anti(k) for k in range(1, K + 1)],
            PointFunction.from_expr("2*sqrt(x)"),
        )
    if preset == "constant":
        return (
            lambda k: PointFunction.from_expr("x"),
            PointFunction.from_expr("x"),
            [PointFunction.from_expr("x^2/2") for _ in range(K)],
            PointFunction.from_expr("x^2/2"),
        )
    if preset == "diverging":
        return (lambda k: PointFunction.from_expr(str(k)), None, None, None)
    raise ConfigError(f"unknown mct preset {preset!r}")


def run_mct(cfg) -> int:
    K = int(cfg.get("K", 64))
    member, f, F_seq, F = _mct_family(cfg.get("preset", "min-inv-sqrt"), K)
    box = _parse_box(cfg.get("box", "[0,1]"))
    (lo, hi), = box.intervals
    report = mct_experiment(
        member, f, (float(lo), float(hi)), K,
        tol=cfg.get("tol", 1e-3), F_seq=F_seq, F=F,
    )
    _emit(cfg, report.to_csv_rows(), report.to_json_dict())
    if report.divergent:
        print("divergent: no finite limit", file=sys.stderr)
        return CHECK_FAILED
    return 0 if report.converged else CHECK_FAILED


# ---------------------------------------------------------------------------
# Entry point

COMMANDS = {
    "integrate": run_integrate,
    "indefinite": run_indefinite,
    "verify-mc": run_verify_mc,
    "variation": run_variation,
    "convert": run_convert,
    "identity": run_identity,
    "mct": run_mct,
}

_FLOAT_KEYS = ("tol", "eps", "delta", "psi_c", "psi_p", "dev_tol")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaugecalc",
        description="gauge-integration and controlled-derivative toolkit",
    )
    sub = parser.add_subparsers(dest="command")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config; flags override it")
        p.add_argument("--f")
        p.add_argument("--F")
        p.add_argument("--g")
        p.add_argument("--G")
        p.add_argument("--phi")
        p.add_argument("--box")
        p.add_argument("--tol", type=float)
        p.add_argument("--budget", type=int)
        p.add_argument("--depth", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--format", choices=("csv", "json"))
        if name == "identity":
            p.add_argument("kind", choices=(
                "parts", "change", "additivity", "monotone", "constancy"))
            p.add_argument("--preset")
            p.add_argument("--a")
            p.add_argument("--b")
            p.add_argument("--c")
            p.add_argument("--dev-tol", dest="dev_tol", type=float)
        if name == "verify-mc":
            p.add_argument("--at")
            p.add_argument("--samples", type=int)
        if name == "variation":
            p.add_argument("--grid")
            p.add_argument("--delta", type=float)
            p.add_argument("--psi-c", dest="psi_c", type=float)
            p.add_argument("--psi-p", dest="psi_p", type=float)
        if name == "convert":
            p.add_argument("--direction", choices=("to-gauge", "to-control"))
            p.add_argument("--eps", type=float)
            p.add_argument("--K", type=int)
            p.add_argument("--samples", type=int)
        if name == "mct":
            p.add_argument("--preset")
            p.add_argument("--K", type=int)
    return parser


def _load_config(path: str) -> dict:
    try:
        with open(path) as handle:
            data = json.load(handle)
    except OSError as e:
        raise ConfigError(f"{path}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno}: {e.msg}")
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return data


def _validate(cfg: dict):
    for key in _FLOAT_KEYS:
        if key in cfg and cfg[key] is not None and not float(cfg[key]) > 0.0:
            raise ConfigError(f"{key} must be > 0, got {cfg[key]}")
    if "budget" in cfg and cfg["budget"] is not None and int(cfg["budget"]) < 1:
        raise ConfigError("budget must be >= 1")
    for key in ("f", "F", "g", "G", "phi"):
        if cfg.get(key) is not None:
            try:
                PointFunction.resolve(cfg[key])
            except (ParseError, ValueError) as e:
                raise ConfigError(f"--{key} {cfg[key]!r}: {e}") from e


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return USAGE_ERROR
    cfg = {}
    if getattr(args, "config", None):
        try:
            cfg.update(_load_config(args.config))
        except ConfigError as e:
            print(f"config error: {e}", file=sys.stderr)
            return USAGE_ERROR
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        cfg[key] = value
    try:
        _validate(cfg)
        return COMMANDS[args.command](cfg)
    except (ConfigError, ParseError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except KeyError as e:
        print(f"config error: missing required option {e}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
