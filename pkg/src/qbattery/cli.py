"""Command-line front end.

Exit codes: 0 success, 1 failed verification, 2 unreadable or malformed
input, 3 invalid parameters, 4 engine failure, 5 incompatible comparison.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import sys

import numpy as np

from qbattery import analysis, config, cumulant, oracle
from qbattery import single_excitation as se
from qbattery.lattice import Trajectory, ValidationError

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_ENGINE = 4
EXIT_COMPARE = 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _load_config(path: str) -> config.RunConfig:
    try:
        return config.load(path)
    except config.ConfigParseError as exc:
        raise CliError(EXIT_PARSE, f"config parse error: {exc}") from exc
    except (ValidationError, IndexError) as exc:
        raise CliError(EXIT_VALIDATION, f"invalid config: {exc}") from exc


def _config_comments(cfg: config.RunConfig) -> list[str]:
    return ["config:"] + ["  " + line for line in config.render(cfg).splitlines()]


def _open_out(path: str):
    if not path or path == "-":
        return None
    return path


def _write_text(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _csv_text(traj: Trajectory, comments) -> str:
    buf = io.StringIO()
    traj.write_csv(buf, comments)
    return buf.getvalue()


def _json_safe(values) -> list:
    return [float(v) if math.isfinite(v) else None for v in np.asarray(values, dtype=float)]


# -- spectrum ------------------------------------------------------------------------

def cmd_spectrum(args) -> int:
    cfg = _load_config(args.config)
    spec = cfg.lattice
    if spec.gamma_collective != 0:
        raise CliError(EXIT_VALIDATION, "spectrum needs lattice.gamma_collective = 0")
    report = se.decay_band_report(spec, cfg.convention)
    comments = [f"spec: {json.dumps(spec.as_dict(), sort_keys=True)}",
                f"convention: {cfg.convention} (site frequency delta - i*gamma/2 in K; "
                f"reference line {'gamma_a/2' if cfg.convention == 'operator' else 'gamma_a'})",
                f"uniform_reference: {report.uniform_reference!r}"]
    fmt = args.format or "csv"
    out = _open_out(args.output or cfg.output_path)
    if fmt == "json":
        rows = [{"l": l, "k": k, "band": "+" if b > 0 else "-", "re_omega": om.real,
                 "im_omega": om.imag, "abs_im_over_delta_a": abs(om.imag) / spec.delta_a}
                for l, k, b, om in report.rows()]
        doc = {"meta": {"spec": spec.as_dict(), "convention": cfg.convention,
                        "uniform_reference": report.uniform_reference}, "rows": rows}
        _write_text(out, json.dumps(doc, indent=2) + "\n")
        return EXIT_OK
    lines = [f"# {c}" for c in comments]
    lines.append("l,k,band,re_omega,im_omega,abs_im_over_delta_a")
    for l, k, b, om in report.rows():
        lines.append(",".join([str(l), format(k, ".17g"), "+" if b > 0 else "-",
                               format(om.real, ".17g"), format(om.imag, ".17g"),
                               format(abs(om.imag) / spec.delta_a, ".17g")]))
    _write_text(out, "\n".join(lines) + "\n")
    return EXIT_OK


# -- run -----------------------------------------------------------------------------

def default_observables(cfg: config.RunConfig) -> list[str]:
    n = cfg.lattice.n_sites
    sz = [f"sigma_z_{j}" for j in range(1, n + 1)]
    if cfg.engine == "single-excitation":
        return sz
    return sz + ["energy", "population"]


def execute(cfg: config.RunConfig) -> Trajectory:
    """Run the configured engine and return its trajectory."""
    spec = cfg.lattice
    names = list(cfg.observables) or default_observables(cfg)
    if cfg.engine == "single-excitation":
        amp_g, excited = cfg.initial.normalized()
        state = se.PureState1X.from_sites(spec.n_sites, amp_g, excited)
        return se.trajectory(spec, state, names, cfg.integrator.times())
    if cfg.engine == "cumulant":
        init = (cumulant.init_fully_charged if cfg.initial.kind == "fully-charged"
                else cumulant.init_ground)(spec)
        traj, _ = cumulant.integrate(spec, init, cfg.integrator, names)
        return traj
    n = spec.n_sites
    if cfg.initial.kind == "fully-charged":
        rho0 = oracle.fully_charged_dm(n)
    elif cfg.initial.kind == "ground":
        rho0 = oracle.ground_state_dm(n)
    else:
        amp_g, excited = cfg.initial.normalized()
        amp_e = np.zeros(n, complex)
        for j, a in excited.items():
            amp_e[j - 1] = a
        rho0 = oracle.pure_state_dm(n, amp_g, amp_e)
    gen = oracle.build_generator(spec, frame=cfg.oracle_frame)
    traj, _ = oracle.propagate(gen, rho0, cfg.integrator, names)
    return traj


def cmd_run(args) -> int:
    cfg = _load_config(args.config)
    try:
        traj = execute(cfg)
    except (ValidationError, IndexError) as exc:
        raise CliError(EXIT_VALIDATION, f"invalid run request: {exc}") from exc
    except (ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        raise CliError(EXIT_ENGINE, f"{cfg.engine} engine failed: {type(exc).__name__}: {exc}") from exc
    fmt = args.format or cfg.output_format
    out = _open_out(args.output or cfg.output_path)
    if fmt == "json":
        doc = {"meta": {"config": config.render(cfg).splitlines()},
               "t": traj.times.tolist(),
               "columns": {k: v.tolist() for k, v in traj.columns.items()}}
        _write_text(out, json.dumps(doc, indent=2) + "\n")
    elif out is None:
        _write_text(None, _csv_text(traj, _config_comments(cfg)))
    else:
        traj.to_csv(out, _config_comments(cfg))
    return EXIT_OK


# -- compare -------------------------------------------------------------------------

def _parse_window(text: str | None):
    if text is None:
        return None
    try:
        a, b = text.split(":")
        t0, t1 = float(a), float(b)
    except ValueError as exc:
        raise CliError(EXIT_PARSE, f"--window must look like t0:t1, got {text!r}") from exc
    if not t0 < t1:
        raise CliError(EXIT_VALIDATION, f"--window needs t0 < t1, got {text!r}")
    return (t0, t1)


def _read_traj(path: str) -> Trajectory:
    try:
        return Trajectory.from_csv(path)
    except (OSError, ValueError, StopIteration) as exc:
        raise CliError(EXIT_PARSE, f"cannot read trajectory {path}: {exc}") from exc


def _regions(times: np.ndarray, mask: np.ndarray) -> list[tuple[float, float]]:
    out = []
    k = 0
    while k < mask.size:
        if mask[k]:
            start = k
            while k + 1 < mask.size and mask[k + 1]:
                k += 1
            out.append((float(times[start]), float(times[k])))
        k += 1
    return out


def compare_report(traj_d: Trajectory, traj_u: Trajectory, window=None, sources=("", "")) -> dict:
    rep = analysis.excess_report(traj_d, traj_u)
    flags = [{"kind": "ill_conditioned", "t_start": a, "t_end": b,
              "reason": f"|E_u| < {analysis.ILL_CONDITIONED}"}
             for a, b in _regions(rep.times, rep.ill_conditioned)]
    try:
        turnover = analysis.turnover_time(rep)
    except analysis.AnalysisError as exc:
        turnover = None
        flags.append({"kind": "no_turnover", "reason": str(exc)})
    fit_window = window or analysis.default_window(rep.times)
    alpha = None
    if np.allclose(rep.absolute_excess, 0.0, rtol=0, atol=0):
        flags.append({"kind": "alpha_undefined", "reason": "identical energies"})
    else:
        try:
            alpha = analysis.power_law_fit(rep, fit_window).alpha
        except analysis.AnalysisError as exc:
            flags.append({"kind": "alpha_undefined", "reason": str(exc)})
    return {
        "meta": {"file_d": sources[0], "file_u": sources[1], "column": "energy",
                 "n_points": int(rep.times.size)},
        "series": {"t": _json_safe(rep.times),
                   "relative_excess": _json_safe(rep.relative_excess),
                   "absolute_excess": _json_safe(rep.absolute_excess)},
        "turnover_time": turnover,
        "alpha": {"value": alpha, "window": list(fit_window)},
        "flags": flags,
    }


def cmd_compare(args) -> int:
    window = _parse_window(args.window)
    traj_d = _read_traj(args.file_d)
    traj_u = _read_traj(args.file_u)
    try:
        doc = compare_report(traj_d, traj_u, window, (args.file_d, args.file_u))
    except analysis.GridMismatch as exc:
        raise CliError(EXIT_COMPARE, f"cannot compare: {exc}") from exc
    except analysis.AnalysisError as exc:
        raise CliError(EXIT_COMPARE, f"cannot compare: {exc}") from exc
    out = _open_out(args.output)
    if (args.format or "json") == "json":
        _write_text(out, json.dumps(doc, indent=2) + "\n")
        return EXIT_OK
    s = doc["series"]
    lines = [f"# meta: {json.dumps(doc['meta'], sort_keys=True)}",
             f"# turnover_time: {json.dumps(doc['turnover_time'])}",
             f"# alpha: {json.dumps(doc['alpha'])}",
             f"# flags: {json.dumps(doc['flags'])}",
             "t,relative_excess,absolute_excess"]
    for row in zip(s["t"], s["relative_excess"], s["absolute_excess"]):
        lines.append(",".join("nan" if v is None else format(v, ".17g") for v in row))
    _write_text(out, "\n".join(lines) + "\n")
    return EXIT_OK


# -- verify --------------------------------------------------------------------------

def cmd_verify(args) -> int:
    from qbattery import verify

    checks = verify.run_checks()
    print(verify.format_table(checks))
    ok = all(c.passed for c in checks)
    print("all checks passed" if ok else "verification FAILED")
    return EXIT_OK if ok else EXIT_VERIFY


# -- entry point ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qbattery", description="Dissipative spin-chain battery simulations.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("spectrum", help="single-excitation decay-band table")
    sp.add_argument("--config", required=True)
    sp.add_argument("--output")
    sp.add_argument("--format", choices=config.FORMATS)
    sp.set_defaults(func=cmd_spectrum)

    rp = sub.add_parser("run", help="propagate one configuration")
    rp.add_argument("--config", required=True)
    rp.add_argument("--output")
    rp.add_argument("--format", choices=config.FORMATS)
    rp.set_defaults(func=cmd_run)

    cp = sub.add_parser("compare", help="energy excess of a dimeric run over a uniform run")
    cp.add_argument("file_d")
    cp.add_argument("file_u")
    cp.add_argument("--window", help="power-law fit window t0:t1 (default: final third)")
    cp.add_argument("--output")
    cp.add_argument("--format", choices=config.FORMATS)
    cp.set_defaults(func=cmd_compare)

    vp = sub.add_parser("verify", help="cross-engine oracle suite")
    vp.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
