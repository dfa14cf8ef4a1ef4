"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 domain error, 3 failed verification.
Options can also come from a flat ``key = value`` file given by ``--config``;
flags given on the command line win.  ``T34_CACHE_DIR`` sets the default cache
directory.
"""

from __future__ import annotations

import argparse
import cmath
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass, asdict

import numpy as np

from . import forests, lattice, mlve, multiscale, sigma, verify
from .params import DomainError, ModelParams

EXIT_USAGE, EXIT_DOMAIN, EXIT_VERIFY = 1, 2, 3

DEFAULTS = {
    "g": "0.02",
    "M": 2,
    "j_max": 1,
    "rho": 0.25,
    "N": None,
    "cutoff": "cubic",
    "samples": 10000,
    "seed": 0,
    "workers": None,
    "output": None,
    "csv": None,
    "format": None,
    "cache_dir": None,
    "representation": "sigma",
    "n_max": None,
    "suite": "all",
    "compare": False,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass(frozen=True)
class RunConfig:
    command: str
    params: ModelParams
    samples: int
    seed: int
    workers: int
    output: str | None
    csv: str | None
    format: str
    cache_dir: str | None
    options: dict

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params"] = self.params.to_dict()
        return d


def _complex(text: str) -> complex:
    try:
        return complex(str(text).replace(" ", ""))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    common.add_argument("--config", default=None, help="flat key = value file; flags override it")
    common.add_argument("--g", type=_complex, default=S, help="coupling, e.g. 0.02 or 0.02+0.01j")
    common.add_argument("--M", type=int, default=S, help="slice ratio (>= 2)")
    common.add_argument("--j-max", dest="j_max", type=int, default=S)
    common.add_argument("--rho", type=float, default=S, help="cardioid radius")
    common.add_argument("--N", type=int, default=S, help="cube cutoff [-N, N]^3")
    common.add_argument("--cutoff", choices=("cubic", "slice"), default=S)
    common.add_argument("--samples", type=int, default=S)
    common.add_argument("--seed", type=int, default=S)
    common.add_argument("--workers", type=int, default=S, help="worker threads (default: cpu count)")
    common.add_argument("--output", default=S, help="result file (default: stdout)")
    common.add_argument("--csv", default=S, help="also write the table as CSV here")
    common.add_argument("--format", choices=("json", "csv"), default=S, help="stdout format")
    common.add_argument("--cache-dir", dest="cache_dir", default=S)

    parser = _Parser(prog="t34lab", description="Finite-cutoff tensor field theory laboratory.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("counterterms", parents=[common], help="vacuum counterterms at the cutoff")
    p = sub.add_parser("partition", parents=[common], help="Monte-Carlo partition function")
    p.add_argument("--representation", choices=("sigma", "tensor"), default=S)
    sub.add_parser("slices", parents=[common], help="sliced interactions for random sigma")
    p = sub.add_parser("forests", parents=[common], help="jungle and forest counts")
    p.add_argument("--n-max", dest="n_max", type=int, default=S)
    p = sub.add_parser("mlve", parents=[common], help="log Z from the jungle expansion")
    p.add_argument("--n-max", dest="n_max", type=int, default=S)
    p.add_argument("--compare", action="store_true", default=S, help="also estimate log Z directly")
    p = sub.add_parser("verify", parents=[common], help="run a check suite")
    p.add_argument("--suite", choices=("all",) + verify.SUITES, default=S)
    return parser


def read_config(path: str) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (x.strip() for x in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in DEFAULTS:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = value
    return out


def _coerce(key: str, value):
    if value is None or not isinstance(value, str):
        return value
    if key == "g":
        return _complex(value)
    if key in ("M", "j_max", "N", "samples", "seed", "workers", "n_max"):
        return None if value.lower() == "none" else int(value)
    if key == "rho":
        return float(value)
    if key == "compare":
        return value.lower() in ("1", "true", "yes")
    return value


def make_config(args: argparse.Namespace) -> RunConfig:
    opts = dict(DEFAULTS)
    opts["cache_dir"] = os.environ.get("T34_CACHE_DIR") or None
    if args.config:
        opts.update(read_config(args.config))
    opts.update({k: v for k, v in vars(args).items() if k in DEFAULTS})
    try:
        opts = {k: _coerce(k, v) for k, v in opts.items()}
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise UsageError(str(exc)) from None
    params = ModelParams(opts["g"], opts["M"], opts["j_max"], opts["rho"], opts["N"], opts["cutoff"])
    if not sigma.cardioid_contains(params.g, params.rho):
        raise DomainError(f"g = {params.g} lies outside the cardioid of radius {params.rho}")
    if opts["samples"] < 1:
        raise UsageError("--samples must be positive")
    workers = opts["workers"] or os.cpu_count() or 1
    fmt = opts["format"] or ("csv" if args.command == "counterterms" else "json")
    extra = {k: opts[k] for k in ("representation", "n_max", "suite", "compare")}
    return RunConfig(args.command, params, opts["samples"], opts["seed"], max(1, workers),
                     opts["output"], opts["csv"], fmt, opts["cache_dir"], extra)


# ---------------------------------------------------------------------------
# commands; each returns (json record, csv header, csv rows)


def _num(z) -> list | float:
    z = complex(z)
    return [z.real, z.imag] if z.imag else z.real


def cmd_counterterms(cfg: RunConfig):
    cs = lattice.cached_counterterms(cfg.params, cfg.cache_dir)
    rel = 1e-12
    rows = [[name, c, N, repr(complex(v).real), repr(complex(v).imag), rel * abs(complex(v))]
            for name, c, N, v in cs.rows()]
    record = {
        "cutoff": cs.N,
        "values": [{"quantity": r[0], "color": r[1], "value": _num(v), "tolerance": r[5]}
                   for r, (_, _, _, v) in zip(rows, cs.rows())],
    }
    return record, ["quantity", "color", "cutoff", "value_re", "value_im", "tolerance"], rows


def cmd_partition(cfg: RunConfig):
    fn = sigma.partition_function_mc if cfg.options["representation"] == "sigma" else sigma.tensor_partition_mc
    est = fn(cfg.params, cfg.samples, cfg.seed, cfg.workers)
    z = est.mean
    log_err = est.std_error / abs(z) if z else math.inf
    record = {"representation": cfg.options["representation"], "Z": est.to_dict(),
              "log_Z": {"mean": _num(cmath.log(z)), "std_error": log_err}}
    rows = [[cfg.options["representation"], z.real, z.imag, est.std_error, est.n_samples]]
    return record, ["representation", "Z_re", "Z_im", "std_error", "n_samples"], rows


def cmd_slices(cfg: RunConfig):
    p = cfg.params
    fm = sigma.field_model(p)
    rng = np.random.default_rng(cfg.seed)
    rows, tele, paths = [], 0.0, 0.0
    tol = 1e-8
    for i in range(cfg.samples):
        s = sigma.sample_sigma(fm.d, rng)
        total = 0j
        for j in range(1, p.j_max + 1):
            a = multiscale.slice_interaction_Vj(s, j, p)
            b = multiscale.slice_interaction_Vj(s, j, p, method="difference")
            paths = max(paths, abs(a - b))
            total += a
            rows.append([i, j, a.real, a.imag, abs(a - b)])
        tele = max(tele, abs(total - sigma.interaction_V(s, p)))
    record = {"n_sigma": cfg.samples, "tolerance": tol,
              "max_telescoping_residual": tele, "max_integral_vs_difference": paths,
              "passed": tele <= tol and paths <= tol}
    return record, ["sample", "slice", "V_re", "V_im", "integral_minus_difference"], rows


def cmd_forests(cfg: RunConfig):
    n_max = cfg.options["n_max"] or 4
    if n_max < 1:
        raise UsageError("--n-max must be positive")
    rows = []
    for n in range(1, n_max + 1):
        formula = forests.jungle_tree_count(n)
        counted = forests.count_jungle_trees(n) if n <= 4 else None
        n_forests = sum(1 for _ in forests.spanning_forests(n)) if n <= 6 else None
        rows.append([n, formula, counted, n_forests, forests.proposition_bound(n)])
    record = {"rows": [dict(zip(["n", "jungle_trees", "enumerated", "forests", "bound"], r)) for r in rows],
              "tolerance": 0}
    return record, ["n", "jungle_trees", "enumerated", "forests", "bound"], rows


def cmd_mlve(cfg: RunConfig):
    n_max = cfg.options["n_max"] or 3
    res = mlve.log_partition_mlve(cfg.params, n_max, cfg.samples, cfg.seed, cfg.workers)
    record = {"n_max": n_max, **res.to_dict()}
    rows = [[n + 1, e.mean.real, e.mean.imag, e.std_error] for n, e in enumerate(res.per_n)]
    if cfg.options["compare"]:
        est = sigma.partition_function_mc(cfg.params, cfg.samples, cfg.seed + 1, cfg.workers)
        log_z = cmath.log(est.mean)
        err = est.std_error / abs(est.mean)
        gap = abs(res.total.mean - log_z)
        comb = math.hypot(err, res.total.std_error)
        record["direct_log_Z"] = {"mean": _num(log_z), "std_error": err}
        record["agreement_sigmas"] = gap / comb if comb else math.inf
    return record, ["n", "partial_sum_re", "partial_sum_im", "std_error"], rows


def cmd_verify(cfg: RunConfig):
    report = verify.run_suite(cfg.options["suite"], cfg.seed)
    rows = [[g, c["name"], c["passed"], c["value"], c["tolerance"]]
            for g, cs in report["checks"].items() for c in cs]
    return report, ["suite", "check", "passed", "value", "tolerance"], rows


COMMANDS = {
    "counterterms": cmd_counterterms,
    "partition": cmd_partition,
    "slices": cmd_slices,
    "forests": cmd_forests,
    "mlve": cmd_mlve,
    "verify": cmd_verify,
}


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _write(path: str | None, text: str) -> None:
    if not text.endswith("\n"):
        text += "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def run(cfg: RunConfig) -> int:
    record, header, rows = COMMANDS[cfg.command](cfg)
    if cfg.command != "verify":
        record = {"command": cfg.command, "params": cfg.params.to_dict(), "samples": cfg.samples,
                  "seed": cfg.seed, **record}
    body = json.dumps(_clean(record), indent=2, sort_keys=True)
    table = _csv_text(header, rows)
    if cfg.csv:
        _write(cfg.csv, table)
    _write(cfg.output, table if cfg.format == "csv" else body)
    if cfg.command == "verify" and not record["passed"]:
        return EXIT_VERIFY
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits on --help and on usage errors
        return int(exc.code or 0)
    try:
        cfg = make_config(args)
        return run(cfg)
    except UsageError as exc:
        print(f"t34lab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DomainError as exc:
        print(f"t34lab: domain error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"t34lab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
