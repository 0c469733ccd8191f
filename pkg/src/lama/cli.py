"""Command-line front end.

Each subcommand has a flat parameter schema.  Values come from the schema
defaults, then an optional ``--config`` file (INI, one section named after
the subcommand), then explicit flags.  The resolved parameters are echoed
into every output: as ``# [section]`` / ``# key = value`` header lines in
CSV and under a ``config`` key in JSON.  Either output file can be fed
back through ``--config`` to reproduce it exactly.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import os
import re
import sys
from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np

from . import __version__
from .constellation import STANDARD_NAMES, ConstellationError, resolve
from .quadrature import QuadratureSpec
from .se_engine import (SEParams, achievable_rate, awgn_required_sigma2, fixed_points, g_function,
                        n0_to_snr_db, required_snr_db, se_run, snr_db_to_n0)
from .simulator import CHANNEL_KINDS, DETECTORS, SimConfig, ser_sweep
from .thresholds import threshold_report

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3

BETA_TOKENS = ("beta_min", "beta_max", "beta_mid")


class ConfigError(ValueError):
    """Bad parameter value, unknown key or malformed config file."""


# ---------------------------------------------------------------------------
# value types: (parse: str -> value, fmt: value -> str), fmt(parse(s)) is a fixed point

def _float(s: str) -> float:
    v = float(s)
    if not np.isfinite(v):
        raise ValueError("must be finite")
    return v


def _int(s: str) -> int:
    f = float(s)
    if f != int(f):
        raise ValueError("must be an integer")
    return int(f)


def _bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("must be true or false")


def _float_list(s: str) -> list:
    """Comma list; an item ``lo:hi:step`` expands to an inclusive range."""
    out = []
    for item in s.split(","):
        item = item.strip()
        if not item:
            continue
        if ":" in item:
            lo, hi, step = (_float(x) for x in item.split(":"))
            if step <= 0 or hi < lo:
                raise ValueError(f"bad range {item!r}")
            n = int(np.floor((hi - lo) / step + 1e-9))
            out.extend(lo + k * step for k in range(n + 1))
        else:
            out.append(_float(item))
    if not out:
        raise ValueError("empty list")
    return out


def _int_list(s: str) -> list:
    out = [_int(x) for x in s.split(",") if x.strip()]
    if not out:
        raise ValueError("empty list")
    return out


def _beta(s: str):
    t = s.strip()
    return t if t in BETA_TOKENS else _float(t)


def _beta_list(s: str) -> list:
    out = [_beta(x) for x in s.split(",") if x.strip()]
    if not out:
        raise ValueError("empty list")
    return out


def _str_list(s: str) -> list:
    out = [x.strip() for x in s.split(",") if x.strip()]
    if not out:
        raise ValueError("empty list")
    return out


def _optional(parse):
    def p(s: str):
        return None if s.strip().lower() in ("", "none") else parse(s)
    return p


def _choice(options):
    def p(s: str):
        t = s.strip()
        if t not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return t
    return p


def _n0post(s: str):
    t = s.strip()
    return t if t == "matched" else _float(t)


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


@dataclass(frozen=True)
class Param:
    parse: Callable[[str], Any]
    default: Optional[str]
    help: str


def _common() -> dict:
    return {
        "seed": Param(_int, "0", "random seed"),
        "threads": Param(_int, str(os.cpu_count() or 1), "worker threads"),
    }


def _quad_params() -> dict:
    return {
        "quad_nodes": Param(_int, "80", "minimum quadrature steps per dimension"),
        "quad_abs_tol": Param(_float, "1e-12", "absolute quadrature tolerance"),
        "quad_rel_tol": Param(_float, "1e-12", "relative quadrature tolerance"),
    }


_FIELD = Param(_optional(_choice(("real", "complex"))), "none",
               "field of a standard alphabet (default: real for PAM, complex otherwise)")

SCHEMAS: dict[str, dict[str, Param]] = {
    "thresholds": {
        "constellations": Param(_str_list, None, "comma list of names or point files"),
        "field": _FIELD,
        **_quad_params(),
    },
    "se": {
        "constellation": Param(str, "qpsk", "alphabet name or point file"),
        "field": _FIELD,
        "beta": Param(_beta, None, "system ratio MT/MR, or beta_min / beta_max / beta_mid"),
        "n0": Param(_optional(_float), "none", "noise variance (alternative to snr_db)"),
        "snr_db": Param(_optional(_float), "none", "SNR in dB (alternative to n0)"),
        "n0post": Param(_n0post, "matched", "postulated noise variance or 'matched'"),
        "iters": Param(_int, "100", "maximum number of states"),
        "conv_tol": Param(_float, "1e-10", "relative-change stopping tolerance"),
        "emit_g": Param(_bool, "false", "emit the fixed-point function on a grid"),
        "g_lo": Param(_float, "1e-4", "lower end of the g grid"),
        "g_hi": Param(_float, "10.0", "upper end of the g grid"),
        "g_points": Param(_int, "400", "number of g grid points"),
        **_quad_params(),
    },
    "fixed-points": {
        "constellation": Param(str, "qpsk", "alphabet name or point file"),
        "field": _FIELD,
        "beta": Param(_beta, None, "system ratio"),
        "n0": Param(_optional(_float), "none", "noise variance (alternative to snr_db)"),
        "snr_db": Param(_optional(_float), "none", "SNR in dB (alternative to n0)"),
        "n_grid": Param(_int, "2000", "bracketing grid size"),
        **_quad_params(),
    },
    "tradeoff": {
        "constellation": Param(str, "qpsk", "alphabet name or point file"),
        "field": _FIELD,
        "betas": Param(_beta_list, "0.1,0.5,beta_mid", "system ratios"),
        "target_ser": Param(_float, "1e-3", "target symbol error rate"),
        "iterations": Param(_int_list, "1,2,3,4,5,6,8,10,15,20,30,50,90,150",
                            "iteration counts I"),
        "snr_lo": Param(_float, "-10.0", "lower end of the SNR search (dB)"),
        "snr_hi": Param(_float, "40.0", "upper end of the SNR search (dB)"),
        **_quad_params(),
    },
    "rate": {
        "constellation": Param(str, "qpsk", "alphabet name or point file"),
        "field": _FIELD,
        "betas": Param(_beta_list, "0.1,beta_min,beta_max", "system ratios"),
        "snr_db": Param(_float_list, "0:30:1", "SNR grid in dB, list or lo:hi:step"),
        "iters": Param(_int, "2000", "maximum SE states"),
        "conv_tol": Param(_float, "1e-10", "relative-change stopping tolerance"),
        **_quad_params(),
    },
    "simulate": {
        "mr": Param(_int, None, "receive antennas"),
        "mt": Param(_int, None, "transmit streams"),
        "constellation": Param(str, "qpsk", "alphabet name or point file"),
        "field": _FIELD,
        "snr_db": Param(_float_list, None, "SNR grid in dB"),
        "trials": Param(_int, "100", "trials per SNR point"),
        "max_iters": Param(_int, "10", "LAMA Gaussian outputs"),
        "detectors": Param(_str_list, "lama", f"comma list from {', '.join(DETECTORS)}"),
        "n0post": Param(_n0post, "matched", "postulated noise variance or 'matched'"),
        "channel": Param(_choice(CHANNEL_KINDS), "iid_gaussian", "channel ensemble"),
        "gamma": Param(_optional(_int), "none", "nonzeros per column of the sparse ensemble"),
        "stop_rule": Param(_choice(("fixed_iters", "tau_non_improving")), "fixed_iters",
                           "LAMA stopping rule"),
    },
    "constellations": {
        "field": _FIELD,
    },
}
for _s in SCHEMAS.values():
    _s.update(_common())


# ---------------------------------------------------------------------------
# configuration resolution

def _config_text(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    if text.lstrip().startswith("{"):
        try:
            cfg = json.loads(text)["config"]
        except (ValueError, KeyError, TypeError):
            raise ConfigError(f"{path}: JSON config needs a top-level 'config' object") from None
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp.read_dict({sec: {k: str(v) for k, v in vals.items()} for sec, vals in cfg.items()})
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()
    if text.startswith("# ["):
        # echoed CSV output: the leading comment block is the config
        lines = []
        for ln in text.splitlines():
            if not ln.startswith("#"):
                break
            lines.append(ln[2:] if ln.startswith("# ") else ln[1:])
        return "\n".join(lines) + "\n"
    return text


def _line_of(text: str, key: str, section: Optional[str] = None) -> Optional[int]:
    pat = re.compile(rf"^\s*\[{re.escape(section)}\]" if section else
                     rf"^\s*{re.escape(key)}\s*[=:]")
    for i, ln in enumerate(text.splitlines(), 1):
        if pat.match(ln):
            return i
    return None


def load_config(path: str, command: str) -> dict:
    """Raw string values of ``[command]`` in ``path``, with unknown keys rejected."""
    text = _config_text(path)
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    schema = SCHEMAS[command]
    for sec in cp.sections():
        if sec != command:
            raise ConfigError(f"{path}:{_line_of(text, '', sec)}: unexpected section [{sec}]; "
                              f"expected [{command}]")
    if not cp.has_section(command):
        raise ConfigError(f"{path}: missing section [{command}]")
    raw = dict(cp.items(command))
    for key in raw:
        if key not in schema:
            raise ConfigError(f"{path}:{_line_of(text, key)}: unknown key {key!r} in "
                              f"[{command}]; valid keys: {', '.join(schema)}")
    raw["__lines__"] = {k: _line_of(text, k) for k in raw}
    raw["__path__"] = path
    return raw


def resolve_params(command: str, config: Optional[dict], flags: dict) -> dict:
    """Merge defaults, config values and flags, then parse every field."""
    schema = SCHEMAS[command]
    lines = (config or {}).get("__lines__", {})
    path = (config or {}).get("__path__")
    out = {}
    for key, prm in schema.items():
        src, raw = "default", prm.default
        if config and key in config:
            src, raw = "config", config[key]
        if flags.get(key) is not None:
            src, raw = "flag", flags[key]
        if raw is None:
            raise ConfigError(f"[{command}] {key}: required ({prm.help})")
        try:
            out[key] = prm.parse(str(raw))
        except (ValueError, TypeError) as exc:
            where = (f"{path}:{lines.get(key)}: " if src == "config" else
                     f"--{key.replace('_', '-')}: " if src == "flag" else "")
            raise ConfigError(f"{where}[{command}] {key} = {raw!r}: {exc}") from None
    return out


# ---------------------------------------------------------------------------
# output

def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else v


def render(command: str, params: dict, rows: list, columns: list, fmt: str,
           extra: Optional[dict] = None) -> str:
    if fmt == "json":
        doc = {"config": {command: {k: _fmt(v) for k, v in params.items()}}, "rows": rows}
        doc.update(extra or {})
        return json.dumps(doc, indent=2, default=float) + "\n"
    buf = io.StringIO()
    buf.write(f"# [{command}]\n")
    for k, v in params.items():
        buf.write(f"# {k} = {_fmt(v)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# subcommands

def _quad(p: dict) -> QuadratureSpec:
    return QuadratureSpec(nodes_per_dim=p["quad_nodes"], abs_tol=p["quad_abs_tol"],
                          rel_tol=p["quad_rel_tol"])


def _alphabet(p: dict, spec: Optional[str] = None):
    return resolve(spec or p["constellation"], p["field"])


def _beta_value(b, c, q: QuadratureSpec) -> float:
    if isinstance(b, float):
        return b
    rep = threshold_report(c, q)
    return {"beta_min": rep.beta_min, "beta_max": rep.beta_max,
            "beta_mid": 0.5 * (rep.beta_min + rep.beta_max)}[b]


def _noise(p: dict, beta: float, es: float) -> float:
    if (p["n0"] is None) == (p["snr_db"] is None):
        raise ConfigError("exactly one of n0 and snr_db must be given")
    return p["n0"] if p["n0"] is not None else float(snr_db_to_n0(p["snr_db"], beta, es))


THRESHOLD_COLUMNS = ["constellation", "beta_min", "n0_min_at_beta_min", "beta_max",
                     "n0_max_at_beta_max", "sigma2_beta_min", "sigma2_beta_max",
                     "sigma2_n0_max", "derivative_check"]


def cmd_thresholds(p: dict):
    q = _quad(p)
    rows = [threshold_report(_alphabet(p, name), q).as_dict() for name in p["constellations"]]
    return rows, THRESHOLD_COLUMNS, None


def cmd_se(p: dict):
    c = _alphabet(p)
    q = _quad(p)
    beta = _beta_value(p["beta"], c, q)
    n0 = _noise(p, beta, c.es)
    n0post = None if p["n0post"] == "matched" else p["n0post"]
    sp = SEParams(beta=beta, n0=n0, constellation=c, n0post=n0post, quad=q)
    trace = se_run(sp, max_iters=p["iters"], conv_tol=p["conv_tol"])
    rows = trace.rows()
    extra = {"params": sp.as_dict(), "converged": trace.converged}
    if not p["emit_g"]:
        return rows, ["t", "sigma2", "gamma2"], extra
    if not sp.matched:
        raise ConfigError("emit_g requires the matched case (n0post = matched)")
    grid = np.geomspace(p["g_lo"], p["g_hi"], p["g_points"])
    g_rows = [{"sigma2": float(x), "g": g_function(float(x), sp)} for x in grid]
    extra["trace"] = rows
    return g_rows, ["sigma2", "g"], extra


def cmd_fixed_points(p: dict):
    c = _alphabet(p)
    q = _quad(p)
    beta = _beta_value(p["beta"], c, q)
    n0 = _noise(p, beta, c.es)
    rep = fixed_points(SEParams(beta=beta, n0=n0, constellation=c, quad=q), n_grid=p["n_grid"])
    extra = {"count": rep.count, "grid_warning": rep.grid_warning}
    return rep.rows(), list(rep.rows()[0]) if rep.rows() else ["sigma2"], extra


TRADEOFF_COLUMNS = ["beta", "iterations", "required_snr_db", "awgn_snr_db", "gap_db"]


def cmd_tradeoff(p: dict):
    c = _alphabet(p)
    q = _quad(p)
    s_awgn = awgn_required_sigma2(c, p["target_ser"])
    rows = []
    for b in p["betas"]:
        beta = _beta_value(b, c, q)
        ref = float(n0_to_snr_db(s_awgn, beta, c.es))
        for it in p["iterations"]:
            snr = required_snr_db(beta, c, it, p["target_ser"], (p["snr_lo"], p["snr_hi"]), q)
            if snr is None:
                continue  # target unreachable at this iteration count
            rows.append({"beta": beta, "iterations": it, "required_snr_db": snr,
                         "awgn_snr_db": ref, "gap_db": snr - ref})
    return rows, TRADEOFF_COLUMNS, None


RATE_COLUMNS = ["beta", "snr_db", "n0", "sigma2", "rate", "awgn_rate", "converged"]


def cmd_rate(p: dict):
    c = _alphabet(p)
    q = _quad(p)
    rows = []
    for b in p["betas"]:
        beta = _beta_value(b, c, q)
        for snr in p["snr_db"]:
            n0 = float(snr_db_to_n0(snr, beta, c.es))
            tr = se_run(SEParams(beta=beta, n0=n0, constellation=c, quad=q),
                        max_iters=p["iters"], conv_tol=p["conv_tol"])
            s2 = tr.final.sigma2
            rows.append({"beta": beta, "snr_db": snr, "n0": n0, "sigma2": s2,
                         "rate": achievable_rate(s2, c, q), "awgn_rate": achievable_rate(n0, c, q),
                         "converged": tr.converged})
    return rows, RATE_COLUMNS, None


def cmd_simulate(p: dict):
    c = _alphabet(p)
    cfg = SimConfig(mr=p["mr"], mt=p["mt"], constellation=c, snr_db_grid=p["snr_db"],
                    trials=p["trials"], max_iters=p["max_iters"], seed=p["seed"],
                    detectors=tuple(p["detectors"]), n0post=p["n0post"], channel=p["channel"],
                    gamma=p["gamma"], stop_rule=p["stop_rule"], threads=p["threads"])
    res = ser_sweep(cfg)
    cols = ["detector", "snr_db", "ser", "stderr", "trials", "errors", "symbols", "diverged"]
    return res.rows, cols, {"variances": res.variances}


def cmd_constellations(p: dict):
    rows = []
    for name in STANDARD_NAMES:
        c = resolve(name, p["field"])
        rows.append({"name": c.name, "field": c.field, "size": c.size, "energy": c.es,
                     "variance": c.variance, "min_sq_distance": c.min_sq_distance,
                     "separable": c.separable})
    return rows, ["name", "field", "size", "energy", "variance", "min_sq_distance",
                  "separable"], None


COMMANDS = {
    "thresholds": (cmd_thresholds, "recovery thresholds and critical noise levels"),
    "se": (cmd_se, "state-evolution trace, optionally the fixed-point function"),
    "fixed-points": (cmd_fixed_points, "all fixed points of matched state evolution"),
    "tradeoff": (cmd_tradeoff, "required SNR versus iteration count"),
    "rate": (cmd_rate, "achievable rate of the decoupled channel"),
    "simulate": (cmd_simulate, "Monte-Carlo SER sweep of finite systems"),
    "constellations": (cmd_constellations, "list the standard alphabets"),
}


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="lama", description=__doc__.split("\n\n")[0])
    top.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    glob = argparse.ArgumentParser(add_help=False)
    glob.add_argument("--out", help="output file (default: stdout)")
    glob.add_argument("--format", choices=("csv", "json"))
    glob.add_argument("--config", help="INI file, or an earlier CSV/JSON output, to load")
    for p in (top, glob):
        default = None if p is top else argparse.SUPPRESS
        p.add_argument("--seed", default=default, help="random seed")
        p.add_argument("--threads", default=default, help="worker threads")
    sub = top.add_subparsers(dest="command", metavar="COMMAND")
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, parents=[glob], help=help_, description=help_)
        for key, prm in SCHEMAS[name].items():
            if key in ("seed", "threads"):
                continue
            dflt = "required" if prm.default is None else f"default {prm.default}"
            sp.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None,
                            help=f"{prm.help} ({dflt})")
    return top


def _locate(exc: Exception, config: Optional[dict]) -> str:
    """Prefix a domain validation message with the config line of the field it names."""
    msg = str(exc)
    if isinstance(exc, ConfigError) or not config:
        return msg
    for key, line in config["__lines__"].items():
        if line is not None and re.search(rf"\b{re.escape(key)}\b", msg):
            return f"{config['__path__']}:{line}: [{key}] {msg}"
    return msg


def run(argv=None) -> tuple[int, str, Optional[str]]:
    """Parse ``argv`` and execute; returns ``(exit_code, output_text, out_path)``."""
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return (EXIT_INVALID if exc.code else EXIT_OK), "", None
    if ns.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_INVALID, "", None
    flags = {k: v for k, v in vars(ns).items() if k in SCHEMAS[ns.command]}
    fn = COMMANDS[ns.command][0]
    config = None
    try:
        config = load_config(ns.config, ns.command) if getattr(ns, "config", None) else None
        params = resolve_params(ns.command, config, flags)
        rows, columns, extra = fn(params)
    except (ConfigError, ConstellationError, ValueError, TypeError) as exc:
        print(f"lama {ns.command}: error: {_locate(exc, config)}", file=sys.stderr)
        return EXIT_INVALID, "", None
    except (ArithmeticError, RuntimeError) as exc:
        print(f"lama {ns.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL, "", None
    text = render(ns.command, params, rows, columns, getattr(ns, "format", None) or "csv", extra)
    out = getattr(ns, "out", None)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return EXIT_OK, text, out


def main(argv=None) -> int:
    code, text, out = run(argv)
    if code == EXIT_OK and text and not out:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
