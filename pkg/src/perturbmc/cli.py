"""Command-line experiment runner.

Every subcommand validates its configuration, runs one experiment and writes
``report.json``, ``manifest.json`` and, where a chain was simulated,
``trace.csv`` into the output directory.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.

Setting ``PERTURBMC_THREADS`` caps the BLAS/OpenMP thread pools.
"""
from __future__ import annotations

import os

_THREADS = os.environ.get("PERTURBMC_THREADS")
if _THREADS:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _THREADS)

import argparse  # noqa: E402
import hashlib  # noqa: E402
import json  # noqa: E402
import platform  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402
import pydantic  # noqa: E402
import scipy  # noqa: E402

from . import __version__  # noqa: E402
from . import experiment as ex  # noqa: E402
from .config import CONFIG_MODELS, ConfigFileError, read_config_file, resolve_config  # noqa: E402

_INT_COLUMNS = {"iteration", "accept"}


def _parse_value(text):
    try:
        return json.loads(text)
    except ValueError:
        return text


def _flags_for(model):
    """(flag, config key) pairs for every overridable field, nested tables flattened."""
    out = []
    for name, info in model.model_fields.items():
        if name in ("experiment", "out", "seed"):
            continue
        sub = info.annotation
        if isinstance(sub, type) and issubclass(sub, pydantic.BaseModel):
            out += [("--" + inner.replace("_", "-"), f"{name}.{inner}") for inner in sub.model_fields]
        else:
            out.append(("--" + name.replace("_", "-"), name))
    return out


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors: exit 1, not argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="perturbmc", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, model in CONFIG_MODELS.items():
        p = subs.add_parser(name, help=(model.__doc__ or name).strip().split("\n")[0])
        p.add_argument("--config", help="TOML or JSON config file")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", help="output directory")
        for flag, key in _flags_for(model):
            p.add_argument(flag, dest="override:" + key, metavar="VALUE",
                           help=f"override '{key}' (JSON literal or string)")
    return parser


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_table(table, path):
    """Deterministic CSV: shortest round-trip float text, integer columns as integers."""
    int_cols = [c in _INT_COLUMNS for c in table.columns]
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(table.columns) + "\n")
        for row in np.asarray(table.rows, dtype=float):
            fh.write(",".join(str(int(v)) if is_int else repr(float(v))
                              for v, is_int in zip(row, int_cols)) + "\n")


def run_experiment(cfg):
    name = cfg.experiment
    if name == "example1":
        return ex.run_example1(cfg.q, cfg.x, cfg.xt, cfg.y, steps=tuple(cfg.steps),
                               replicates=cfg.replicates, seed=cfg.seed, init=cfg.init,
                               trace_steps=cfg.trace_steps)
    if name == "ar1":
        return ex.run_ar1(cfg.alpha, cfg.alphatilde, steps=tuple(cfg.steps),
                          replicates=cfg.replicates, seed=cfg.seed, trace_steps=cfg.trace_steps)
    if name == "noisy-imh":
        return ex.run_noisy_imh(cfg.sigma2, tuple(cfg.region), steps=tuple(cfg.steps),
                                replicates=cfg.replicates, seed=cfg.seed, init=cfg.init,
                                trace_steps=cfg.trace_steps)
    if name == "vonmises":
        s = cfg.sampler
        return ex.run_vonmises(n=cfg.n, d_z=cfg.d_z, beta_true=tuple(cfg.beta_true),
                               kappa_true=cfg.kappa_true, data_seed=cfg.data_seed, k=s.k,
                               cv_order=s.cv_order, iterations=s.iterations, burn_in=s.burn_in,
                               proposal_scale=s.proposal_scale, seed=cfg.seed,
                               full_baseline=cfg.full_baseline)
    if name == "bounds":
        return ex.run_bounds(cfg.theorem, cfg.alpha, cfg.epsilon, w0=cfg.w0,
                             steps=tuple(cfg.steps), beta=cfg.beta, L=cfg.L,
                             integral_V_p0=cfg.integral_V_p0)
    if name == "metrics-selftest":
        art = ex.run_metrics_selftest(cfg.instances, seed=cfg.seed)
        if not art.report["passed"]:
            raise RuntimeError("transport oracles disagree beyond tolerance")
        return art
    raise ValueError(f"unknown experiment {name!r}")


def write_outputs(cfg, artifacts, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, table in artifacts.tables.items():
        path = out_dir / f"{name}.csv"
        write_table(table, path)
        files[path.name] = _sha256(path)
    report_path = out_dir / "report.json"
    report_path.write_text(json.dumps(artifacts.report, indent=2, sort_keys=True) + "\n")
    files[report_path.name] = _sha256(report_path)
    manifest = {
        "package": "perturbmc",
        "version": __version__,
        "experiment": cfg.experiment,
        "config": cfg.model_dump(mode="json"),
        "seed": cfg.seed,
        "dataset_sha256": artifacts.dataset_checksum,
        "files": files,
        "environment": {"python": platform.python_version(), "numpy": np.__version__,
                        "scipy": scipy.__version__, "threads": _THREADS},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _format_validation_error(err):
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"config error at '{loc}': {e['msg']}")
    return "\n".join(lines)


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {k.split(":", 1)[1]: _parse_value(v) for k, v in vars(args).items()
                 if k.startswith("override:") and v is not None}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = resolve_config(args.command, file_values, overrides)
    except ConfigFileError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except pydantic.ValidationError as exc:
        print(_format_validation_error(exc), file=sys.stderr)
        return 1
    try:
        artifacts = run_experiment(cfg)
        write_outputs(cfg, artifacts, cfg.out or f"perturbmc-out/{cfg.experiment}")
    except Exception as exc:  # runtime failures map to exit code 2
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    json.dump(_headline(artifacts.report), sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0


def _headline(report):
    """The scalar top-level entries of a report, printed to stdout."""
    return {k: v for k, v in report.items() if not isinstance(v, (dict, list))} | {
        k: report[k] for k in ("efficiency",) if k in report}


if __name__ == "__main__":
    sys.exit(main())
