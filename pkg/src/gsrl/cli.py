"""Command line interface.

Every output starts with a ``#``-prefixed config comment that restates the
run as a canonical command line; re-running that line reproduces the output
byte for byte (outputs carry no timestamps).  Numbers are printed with
shortest round-trip precision.  Exit codes: 0 on success, 2 on usage errors,
3 on computational failures (a machine-readable JSON record goes to stderr).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .analysis import build_matrix, calibrate_threshold, compare_methods, convergence_study
from .errors import GsrlError
from .kernel import Method, dump_matrix_csv
from .model import ChangePointModel, PsiKind
from .solver import (
    conditional_pfa,
    evaluate_iterated,
    pmf,
    run_length_std,
    solve_arl,
    solve_second_moment,
    survival_series,
)

_METHODS = {"hat": Method.COLLOCATION_HAT, "midpoint": Method.MIDPOINT}
_PSI = {"gsr": PsiKind.GSR, "cusum": PsiKind.CUSUM}


def _floats(text: str) -> tuple:
    try:
        return tuple(float(tok) for tok in text.split(",") if tok != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> tuple:
    try:
        return tuple(int(tok) for tok in text.split(",") if tok != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _method_list(text: str) -> tuple:
    names = tuple(tok for tok in text.split(",") if tok != "")
    for name in names:
        if name not in _METHODS:
            raise argparse.ArgumentTypeError(f"unknown method {name!r} (choose from hat, midpoint)")
    if not names:
        raise argparse.ArgumentTypeError("at least one method is required")
    return names


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


@dataclass
class RunConfig:
    """Resolved parameters of one CLI invocation (canonical form)."""

    command: str
    theta: float
    psi: str
    threshold: Optional[float] = None
    gamma: Optional[float] = None
    headstarts: tuple = (0.0,)
    nodes: tuple = (1024,)
    methods: tuple = ("hat",)
    epsilon_tail: float = 1e-12
    horizon: int = 0
    k_values: tuple = ()
    m_values: tuple = ()
    paths: int = 100_000
    seed: int = 0
    cap: int = 0
    rel_tol: float = 1e-4
    probe: int = 1000
    survival_k: tuple = ()
    pfa_k: tuple = ()
    pfa_m: tuple = ()
    fmt: str = "csv"

    def canonical_tokens(self) -> list:
        """The command line that reproduces this run, token by token."""
        toks = ["gsrl", self.command, "--theta", _fmt(self.theta), "--psi", self.psi]
        if self.command == "calibrate":
            toks += ["--gamma", _fmt(self.gamma)]
        elif self.gamma is not None:
            toks += ["--gamma", _fmt(self.gamma)]
        else:
            toks += ["--threshold", _fmt(self.threshold)]
        joined_r = ",".join(_fmt(r) for r in self.headstarts)
        if self.command in ("arl", "moments"):
            toks += ["--headstart", joined_r, "--nodes", str(self.nodes[0]),
                     "--method", self.methods[0]]
        elif self.command in ("survival", "pmf"):
            toks += ["--headstart", joined_r, "--nodes", str(self.nodes[0]),
                     "--method", self.methods[0],
                     "--epsilon-tail", _fmt(self.epsilon_tail), "--horizon", str(self.horizon)]
        elif self.command == "pfa":
            toks += ["--headstart", joined_r, "--nodes", str(self.nodes[0]),
                     "--method", self.methods[0],
                     "--k", ",".join(str(k) for k in self.k_values),
                     "--m", ",".join(str(m) for m in self.m_values)]
        elif self.command == "calibrate":
            toks += ["--headstart", joined_r, "--nodes", str(self.nodes[0]),
                     "--rel-tol", _fmt(self.rel_tol), "--method", self.methods[0]]
        elif self.command in ("converge", "compare"):
            toks += ["--headstart", joined_r,
                     "--nodes", ",".join(str(n) for n in self.nodes),
                     "--method", ",".join(self.methods),
                     "--probe", str(self.probe)]
        elif self.command == "simulate":
            toks += ["--headstart", joined_r, "--paths", str(self.paths),
                     "--seed", str(self.seed), "--cap", str(self.cap)]
            if self.survival_k:
                toks += ["--survival-k", ",".join(str(k) for k in self.survival_k)]
            if self.pfa_k:
                toks += ["--pfa-k", ",".join(str(k) for k in self.pfa_k),
                         "--pfa-m", ",".join(str(m) for m in self.pfa_m)]
        toks += ["--format", self.fmt]
        return toks


@dataclass
class _Output:
    header: tuple
    rows: list
    # (key, value) pairs rendered as "# key = value" comments (CSV) or
    # top-level fields (JSON).
    comments: list = field(default_factory=list)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gsrl",
        description="Run-length distribution, moments and false-alarm risk of "
                    "Shiryaev-Roberts-type detection procedures.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, gamma_only: bool = False) -> None:
        p.add_argument("--theta", type=float, required=True, help="post-change mean shift (> 0)")
        p.add_argument("--psi", choices=sorted(_PSI), default="gsr", help="recursion family")
        if gamma_only:
            p.add_argument("--gamma", type=float, required=True,
                           help="target expected pre-change run length")
        else:
            group = p.add_mutually_exclusive_group(required=True)
            group.add_argument("--threshold", type=float, help="alarm threshold A")
            group.add_argument("--gamma", type=float,
                               help="target run length; the threshold is calibrated first")
        p.add_argument("--format", dest="fmt", choices=("csv", "json"), default="csv")
        p.add_argument("--output", default=None, help="output path (default: stdout)")

    def single_matrix(p: argparse.ArgumentParser) -> None:
        p.add_argument("--nodes", type=int, default=1024, help="number of unknowns")
        p.add_argument("--method", choices=sorted(_METHODS), default="hat")
        p.add_argument("--dump-matrix", default=None, help="also write the assembled matrix as CSV")

    p = sub.add_parser("arl", help="expected pre-change run length")
    common(p)
    single_matrix(p)
    p.add_argument("--headstart", type=_floats, default=(0.0,))

    p = sub.add_parser("moments", help="expected run length and its standard deviation")
    common(p)
    single_matrix(p)
    p.add_argument("--headstart", type=_floats, default=(0.0,))

    for name, blurb in (("survival", "survival probabilities of the run length"),
                        ("pmf", "probability mass of the run length")):
        p = sub.add_parser(name, help=blurb)
        common(p)
        single_matrix(p)
        p.add_argument("--headstart", type=_floats, default=(0.0,))
        p.add_argument("--epsilon-tail", type=float, default=1e-12,
                       help="stop once the survival probability drops below this")
        p.add_argument("--horizon", type=int, default=0,
                       help="largest k to compute (0 = automatic)")

    p = sub.add_parser("pfa", help="conditional false-alarm probabilities")
    common(p)
    single_matrix(p)
    p.add_argument("--headstart", type=_floats, default=(0.0,))
    p.add_argument("--k", type=_ints, default=(0,), help="conditioning times, comma separated")
    p.add_argument("--m", type=_ints, required=True, help="look-ahead windows, comma separated")

    p = sub.add_parser("calibrate", help="threshold matching a target run length")
    common(p, gamma_only=True)
    p.add_argument("--headstart", type=_floats, default=(0.0,))
    p.add_argument("--nodes", type=int, default=1024)
    p.add_argument("--method", choices=sorted(_METHODS), default="hat")
    p.add_argument("--rel-tol", type=float, default=1e-4)

    for name, blurb in (("converge", "solution values and observed rates across sizes"),
                        ("compare", "hat collocation against the midpoint baseline")):
        p = sub.add_parser(name, help=blurb)
        common(p)
        p.add_argument("--headstart", type=_floats, default=(0.0,))
        p.add_argument("--nodes", type=_ints, required=True, help="sizes, comma separated")
        default_methods = ("hat",) if name == "converge" else ("hat", "midpoint")
        p.add_argument("--method", type=_method_list, default=default_methods,
                       help="methods, comma separated")
        p.add_argument("--probe", type=int, default=1000, help="probe grid size for sup norms")

    p = sub.add_parser("simulate", help="Monte Carlo estimates of run-length quantities")
    common(p)
    p.add_argument("--headstart", type=_floats, default=(0.0,))
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cap", type=int, default=0, help="per-path step bound (0 = automatic)")
    p.add_argument("--survival-k", type=_ints, default=(), help="also estimate P(T > k)")
    p.add_argument("--pfa-k", type=_ints, default=(), help="also estimate conditional false alarms")
    p.add_argument("--pfa-m", type=_ints, default=())
    p.add_argument("--histogram", default=None, help="write the raw run-length histogram as CSV")

    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(
        command=args.command,
        theta=args.theta,
        psi=args.psi,
        threshold=getattr(args, "threshold", None),
        gamma=getattr(args, "gamma", None),
        fmt=args.fmt,
    )
    cfg.headstarts = tuple(args.headstart)
    if not cfg.headstarts:
        raise ValueError("at least one headstart is required")
    if args.command in ("arl", "moments", "survival", "pmf", "pfa", "calibrate"):
        cfg.nodes = (int(args.nodes),)
        cfg.methods = (args.method,)
    if args.command in ("survival", "pmf"):
        cfg.epsilon_tail = float(args.epsilon_tail)
        cfg.horizon = int(args.horizon)
        if cfg.horizon < 0:
            raise ValueError("horizon must be nonnegative (0 means automatic)")
    if args.command == "pfa":
        cfg.k_values = tuple(args.k)
        cfg.m_values = tuple(args.m)
        if not cfg.m_values:
            raise ValueError("at least one look-ahead window is required")
    if args.command == "calibrate":
        cfg.rel_tol = float(args.rel_tol)
    if args.command in ("converge", "compare"):
        cfg.nodes = tuple(args.nodes)
        cfg.methods = tuple(args.method)
        cfg.probe = int(args.probe)
    if args.command == "simulate":
        cfg.paths = int(args.paths)
        cfg.seed = int(args.seed)
        cfg.cap = int(args.cap)
        cfg.survival_k = tuple(args.survival_k)
        cfg.pfa_k = tuple(args.pfa_k)
        cfg.pfa_m = tuple(args.pfa_m)
        if bool(cfg.pfa_k) != bool(cfg.pfa_m):
            raise ValueError("--pfa-k and --pfa-m must be given together")
    if len(cfg.headstarts) > 1 and args.command not in ("arl", "moments"):
        raise ValueError(f"{args.command} accepts a single headstart")
    return cfg


def _model_for(cfg: RunConfig) -> ChangePointModel:
    return ChangePointModel(theta=cfg.theta, psi_kind=_PSI[cfg.psi])


def _resolve_threshold(cfg: RunConfig, model: ChangePointModel) -> tuple:
    """Threshold plus comment lines; calibrates when --gamma was given."""
    if cfg.command == "calibrate" or cfg.gamma is None:
        return cfg.threshold, []
    nodes = cfg.nodes[0] if cfg.command in ("arl", "moments", "survival", "pmf", "pfa") else 1024
    method = _METHODS[cfg.methods[0]] if cfg.methods[0] in _METHODS else Method.COLLOCATION_HAT
    result = calibrate_threshold(
        model, cfg.gamma, headstart=cfg.headstarts[0], num_nodes=nodes, rel_tol=cfg.rel_tol, method=method
    )
    return result.threshold, [("calibrated_threshold", result.threshold)]


def _solved(cfg: RunConfig, model: ChangePointModel, threshold: float, args: argparse.Namespace):
    matrix = build_matrix(model, threshold, cfg.nodes[0], _METHODS[cfg.methods[0]])
    dump = getattr(args, "dump_matrix", None)
    if dump:
        dump_matrix_csv(matrix, dump)
    return matrix


def _cmd_arl(cfg, model, threshold, args) -> _Output:
    matrix = _solved(cfg, model, threshold, args)
    sol = solve_arl(matrix)
    rows = [(r, float(evaluate_iterated(sol, r))) for r in cfg.headstarts]
    return _Output(header=("r", "arl"), rows=rows)


def _cmd_moments(cfg, model, threshold, args) -> _Output:
    matrix = _solved(cfg, model, threshold, args)
    arl = solve_arl(matrix)
    second = solve_second_moment(matrix, arl)
    rows = []
    for r in cfg.headstarts:
        rows.append((r, float(evaluate_iterated(arl, r)), float(run_length_std(arl, second, r))))
    return _Output(header=("r", "arl", "stddev"), rows=rows)


def _survival_parts(cfg, model, threshold, args):
    matrix = _solved(cfg, model, threshold, args)
    r = cfg.headstarts[0]
    series = survival_series(
        matrix, r, epsilon_tail=cfg.epsilon_tail, k_max=cfg.horizon if cfg.horizon > 0 else None
    )
    arl_value = float(evaluate_iterated(solve_arl(matrix), r))
    return series, arl_value


def _cmd_survival(cfg, model, threshold, args) -> _Output:
    series, arl_value = _survival_parts(cfg, model, threshold, args)
    masses = pmf(series)
    geom = 1.0 - 1.0 / arl_value
    rows = []
    for k, rho in enumerate(series.values):
        mass = masses[k - 1] if k >= 1 else None
        rows.append((k, float(rho), mass, geom**k))
    return _Output(header=("k", "rho", "pmf", "geom_ref"), rows=rows)


def _cmd_pmf(cfg, model, threshold, args) -> _Output:
    series, _ = _survival_parts(cfg, model, threshold, args)
    masses = pmf(series)
    rows = [(k + 1, float(p)) for k, p in enumerate(masses)]
    return _Output(header=("k", "pmf"), rows=rows)


def _cmd_pfa(cfg, model, threshold, args) -> _Output:
    matrix = _solved(cfg, model, threshold, args)
    needed = max(cfg.k_values) + max(cfg.m_values)
    series = survival_series(matrix, cfg.headstarts[0], epsilon_tail=0.0, k_max=needed)
    rows = []
    for k in cfg.k_values:
        for m in cfg.m_values:
            rows.append((k, m, conditional_pfa(series, k, m)))
    return _Output(header=("k", "m", "pfa"), rows=rows)


def _cmd_calibrate(cfg, model, args) -> _Output:
    result = calibrate_threshold(
        model,
        cfg.gamma,
        headstart=cfg.headstarts[0],
        num_nodes=cfg.nodes[0],
        rel_tol=cfg.rel_tol,
        method=_METHODS[cfg.methods[0]],
    )
    rows = [(result.gamma, result.threshold, result.achieved_arl, result.iterations)]
    return _Output(header=("gamma", "threshold", "achieved_arl", "iterations"), rows=rows)


def _cmd_converge(cfg, model, threshold, args) -> _Output:
    rows = []
    for name in cfg.methods:
        report = convergence_study(
            model, threshold, cfg.nodes, method=_METHODS[name],
            headstart=cfg.headstarts[0], probe_count=cfg.probe,
        )
        for i, n in enumerate(report.n_values):
            rows.append((n, name, float(report.values[i]),
                         float(report.rates[i]), float(report.err_estimates[i])))
    return _Output(header=("N", "method", "value", "rate", "err_est"), rows=rows)


def _cmd_compare(cfg, model, threshold, args) -> _Output:
    comparison = compare_methods(
        model, threshold, cfg.nodes, headstart=cfg.headstarts[0],
        methods=tuple(_METHODS[name] for name in cfg.methods), probe_count=cfg.probe,
    )
    rows = []
    for name, study, errs in zip(cfg.methods, comparison.studies, comparison.errors):
        for i, n in enumerate(study.n_values):
            rows.append((n, name, float(study.values[i]), float(study.rates[i]), float(errs[i])))
    return _Output(
        header=("N", "method", "value", "rate", "err_vs_ref"),
        rows=rows,
        comments=[("reference", comparison.reference)],
    )


def _cmd_simulate(cfg, model, threshold, args) -> _Output:
    from . import oracle

    result = oracle.simulate_run_length(
        model, threshold, headstart=cfg.headstarts[0], paths=cfg.paths,
        seed=cfg.seed, cap=cfg.cap if cfg.cap > 0 else None,
    )
    estimates = [result.arl(), result.std_dev()]
    estimates += [result.survival(k) for k in cfg.survival_k]
    for k in cfg.pfa_k:
        for m in cfg.pfa_m:
            estimates.append(result.conditional_pfa(k, m))
    rows = []
    for est in estimates:
        k = est.params[0] if est.quantity in ("survival", "pfa") else None
        m = est.params[1] if est.quantity == "pfa" else None
        rows.append((est.quantity, k, m, est.estimate, est.std_error))
    comments = [
        ("cap", result.cap),
        ("capped_fraction", result.capped_fraction),
        ("reliable", result.reliable),
    ]
    if args.histogram:
        counts = result.histogram()
        lines = ["# " + " ".join(cfg.canonical_tokens()), "k,count"]
        for k in np.nonzero(counts)[0]:
            lines.append(f"{int(k)},{int(counts[k])}")
        with open(args.histogram, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    return _Output(header=("quantity", "k", "m", "estimate", "std_error"), rows=rows, comments=comments)


def _json_cell(value):
    if value is None:
        return None
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        # strict JSON has no NaN/Infinity tokens
        return float(value) if math.isfinite(value) else None
    return str(value)


def _render(cfg: RunConfig, out: _Output) -> str:
    config_line = " ".join(cfg.canonical_tokens())
    if cfg.fmt == "json":
        payload = {"config": config_line}
        for key, value in out.comments:
            payload[key] = _json_cell(value)
        payload["columns"] = list(out.header)
        payload["rows"] = [[_json_cell(v) for v in row] for row in out.rows]
        return json.dumps(payload, indent=2, allow_nan=False) + "\n"
    lines = ["# " + config_line]
    lines += [f"# {key} = {_fmt(value)}" for key, value in out.comments]
    lines.append(",".join(out.header))
    for row in out.rows:
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def _write(text: str, path: Optional[str]) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from_args(args)
        model = _model_for(cfg)
        if cfg.command == "calibrate":
            out = _cmd_calibrate(cfg, model, args)
        else:
            threshold, comments = _resolve_threshold(cfg, model)
            handler = {
                "arl": _cmd_arl,
                "moments": _cmd_moments,
                "survival": _cmd_survival,
                "pmf": _cmd_pmf,
                "pfa": _cmd_pfa,
                "converge": _cmd_converge,
                "compare": _cmd_compare,
                "simulate": _cmd_simulate,
            }[cfg.command]
            out = handler(cfg, model, threshold, args)
            out.comments = comments + out.comments
        _write(_render(cfg, out), args.output)
        return 0
    except GsrlError as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 3
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
