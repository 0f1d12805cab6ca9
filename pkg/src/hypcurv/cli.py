"""Command-line experiment driver.

    hypcurv run EXPERIMENT [--config PATH] [--seed N] [--workers N] [--out DIR] [--KEY VALUE ...]
    hypcurv list-experiments
    hypcurv validate-config PATH

Config files are flat ``key = value`` lines; values are numbers, booleans,
bare or quoted strings, or ``[a, b, c]`` array literals.  ``#`` starts a
comment.  Command-line flags override file keys.  Exit codes: 0 pass,
1 numeric check failed, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import re
import subprocess
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from . import __version__
from . import bodies as bd
from . import horograph as hg
from . import hypcore as hc
from . import intrinsic as it
from . import tubes as tb
from .config import DEFAULT, Tolerances

log = logging.getLogger("hypcurv")

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config file format

_NUM = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
_BARE = re.compile(r"[A-Za-z_./][A-Za-z0-9_.\-/]*")
_KEY = re.compile(r"[A-Za-z_][A-Za-z0-9_.\-]*$")


def _parse_scalar(tok: str, where: str):
    t = tok.strip()
    if not t:
        raise ConfigError(f"{where}: empty value")
    if t[0] in "\"'":
        if len(t) < 2 or t[-1] != t[0]:
            raise ConfigError(f"{where}: unterminated string")
        return t[1:-1]
    if t in ("true", "false"):
        return t == "true"
    if _NUM.match(t):
        v = float(t)
        return int(v) if re.fullmatch(r"[+-]?\d+", t) else v
    if _BARE.fullmatch(t):
        return t
    raise ConfigError(f"{where}: cannot parse value {t!r}")


def _parse_value(raw: str, line: int, col: int):
    s = raw.strip()
    where = f"line {line}, column {col + len(raw) - len(raw.lstrip())}"
    if s.startswith("["):
        if not s.endswith("]"):
            raise ConfigError(f"{where}: array literal missing ']'")
        body = s[1:-1].strip()
        if not body:
            return []
        out = []
        pos = col + raw.index("[") + 1
        for part in body.split(","):
            if part.strip().startswith("[") or "]" in part:
                raise ConfigError(f"line {line}, column {pos}: nested arrays are not supported")
            out.append(_parse_scalar(part, f"line {line}, column {pos}"))
            pos += len(part) + 1
        return out
    return _parse_scalar(s, where)


def _strip_comment(line: str) -> str:
    quote = None
    for i, ch in enumerate(line):
        if quote:
            quote = None if ch == quote else quote
        elif ch in "\"'":
            quote = ch
        elif ch == "#":
            return line[:i]
    return line


def parse_config_text(text: str) -> Dict[str, object]:
    out: Dict[str, object] = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = _strip_comment(line)
        if not stripped.strip():
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {ln}, column 1: expected 'key = value'")
        k, v = stripped.split("=", 1)
        key = k.strip()
        if not _KEY.match(key):
            raise ConfigError(f"line {ln}, column {len(k) - len(k.lstrip()) + 1}: invalid key {key!r}")
        if key in out:
            raise ConfigError(f"line {ln}, column 1: duplicate key {key!r}")
        out[key] = _parse_value(v, ln, len(k) + 2)
    return out


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    s = str(v)
    return s if _BARE.fullmatch(s) and not _NUM.match(s) and s not in ("true", "false") \
        else json.dumps(s)


def format_config(cfg: Dict[str, object]) -> str:
    return "".join(f"{k} = {_fmt(cfg[k])}\n" for k in sorted(cfg))


# ---------------------------------------------------------------------------
# experiments


@dataclass(frozen=True)
class Experiment:
    name: str
    description: str
    defaults: Dict[str, object]
    run: Callable[[Dict[str, object], Tolerances], "Result"]


@dataclass
class Result:
    passed: bool
    metrics: Dict[str, object]
    tables: Dict[str, str]          # file name -> CSV text


def _csv(header: List[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _ball(cfg):
    return bd.Ball(hc.origin(3), float(cfg["R"]))


def _rhos(cfg, key="rhos"):
    r = cfg[key]
    if not isinstance(r, list) or not r:
        raise ConfigError(f"{key} must be a non-empty array")
    if any(not isinstance(x, (int, float)) or isinstance(x, bool) or x <= 0 for x in r):
        raise ConfigError(f"{key} must contain positive numbers")
    return np.array(r, dtype=float)


def _exact_ball_tube(R, rho):
    return np.pi * (np.sinh(2 * (R + rho)) - 2 * (R + rho)) - np.pi * (np.sinh(2 * R) - 2 * R)


def run_ball_validation(cfg, tol):
    R = float(cfg["R"])
    K = _ball(cfg)
    rhos = _rhos(cfg)
    ts = tb.tube_samples(K, bd.WholeBoundary(), rhos, int(cfg["samples"]), int(cfg["seed"]),
                         int(cfg["workers"]), body_id="ball", patch_id="all")
    exact = _exact_ball_tube(R, rhos)
    z = (ts.mu - exact) / ts.se
    rel = np.abs(ts.mu / exact - 1)
    ok = bool(np.all(np.abs(z) <= 3) and np.all(rel < 0.01))
    fit = tb.steiner_fit(ts, tol) if len(rhos) >= 3 else None
    ref = tb.ball_measures(3, R)
    m = {"max_abs_z": float(np.max(np.abs(z))), "max_rel_err": float(np.max(rel))}
    if fit is not None:
        m["C"] = fit.coeffs.tolist()
        m["C_exact"] = ref.tolist()
        m["C_rel_err"] = (fit.coeffs / ref - 1).tolist()
    rows = zip(rhos, ts.mu, ts.se, exact, z)
    return Result(ok, m, {"ball_validation.csv": _csv(["rho", "mu", "se", "exact", "z"], rows)})


def _body_from_cfg(cfg):
    kind = cfg["body"]
    if kind == "ball":
        return _ball(cfg), bd.WholeBoundary(), None
    if kind == "polytope":
        K = bd.random_polytope(float(cfg["R"]), int(cfg["m"]), int(cfg["body_seed"]))
        return K, bd.WholeBoundary(), None
    if kind == "horograph":
        u = hg.random_smooth(int(cfg["body_seed"]), float(cfg["domain"]))
        K = bd.HoroGraphBody(hc.HoroFrame.standard(3), u)
        c = np.array(cfg["center"], dtype=float)
        return K, bd.ChartDisc(K.frame, c, float(cfg["eps"])), u
    raise ConfigError(f"unknown body {kind!r} (ball, polytope, horograph)")


def run_steiner_fit(cfg, tol):
    K, patch, _ = _body_from_cfg(cfg)
    ts = tb.tube_samples(K, patch, _rhos(cfg), int(cfg["samples"]), int(cfg["seed"]), int(cfg["workers"]),
                         body_id=str(cfg["body"]), patch_id=type(patch).__name__)
    fit = tb.steiner_fit(ts, tol)
    m = fit.to_dict()
    ok = 0.2 <= fit.chi2_dof <= 4.0
    if cfg["body"] == "ball":
        ref = tb.ball_measures(3, float(cfg["R"]))
        rel = np.abs(fit.coeffs / ref - 1)
        m["C_exact"] = ref.tolist()
        m["C_rel_err"] = rel.tolist()
        ok = ok and bool(np.all(rel <= 0.02))
    return Result(bool(ok), m, {"tube_samples.csv": ts.to_csv()})


def run_convergence(cfg, tol):
    R = float(cfg["R"])
    target = _ball(cfg)
    rhos = _rhos(cfg)
    j_grid = [int(j) for j in cfg["j_grid"]]
    if not j_grid:
        raise ConfigError("j_grid must be a non-empty array")
    region = lambda r: tb.BallRegion(hc.origin(3), R + r + 1e-3)
    table = tb.convergence_experiment(target, lambda j: bd.random_polytope(R, j, int(cfg["body_seed"])), j_grid,
                                      bd.WholeBoundary(), rhos, int(cfg["samples"]), int(cfg["seed"]), region,
                                      tb.ball_measures(3, R), int(cfg["workers"]))
    final = np.abs(table.rows[-1].rel_err_exact)
    ok = bool(np.all(table.decreasing) and np.all(final < 0.05))
    m = {"decreasing": table.decreasing.tolist(), "spearman": table.spearman.tolist(),
         "final_rel_err": final.tolist()}
    return Result(ok, m, {"convergence.csv": table.to_csv()})


def run_gauss_check(cfg, tol):
    K, patch, u = _body_from_cfg(cfg)
    ts = tb.tube_samples(K, patch, _rhos(cfg), int(cfg["samples"]), int(cfg["seed"]), int(cfg["workers"]))
    fit = tb.steiner_fit(ts, tol)
    if cfg["body"] == "ball":
        est = it.CurvatureEstimate("whole", 4 * np.pi, "gauss-bonnet", {}, 0.0)
    elif cfg["body"] == "polytope":
        est = it.polytope_curvature(K)
    else:
        est = it.CurvatureEstimate("patch", it.patch_omega(u, patch.center, patch.radius), "quadrature", {}, 0.0)
    rep = it.gauss_check(fit, est)
    return Result(rep.passed, {**rep.to_dict(), "fit": fit.to_dict()}, {"tube_samples.csv": ts.to_csv()})


def _surface(cfg):
    s = cfg["surface"]
    if s == "ball":
        return hg.ball_graph(float(cfg["R"]))
    if s == "random":
        return hg.random_smooth(int(cfg["body_seed"]), float(cfg["domain"]))
    raise ConfigError(f"unknown surface {s!r} (ball, random)")


def _points(cfg):
    p = cfg["points"]
    if not isinstance(p, list) or len(p) % 2 or not p:
        raise ConfigError("points must be a flat array x1, y1, x2, y2, ...")
    return np.array(p, dtype=float).reshape(-1, 2)


def run_density_ratio(cfg, tol):
    u = _surface(cfg)
    K = bd.HoroGraphBody(hc.HoroFrame.standard(3), u)
    eps = _rhos(cfg, "eps")
    rows, worst = [], 0.0
    for x0 in _points(cfg):
        dr = it.density_ratio(K, x0, eps, int(cfg["samples"]), int(cfg["seed"]), _rhos(cfg),
                              int(cfg["workers"]))
        for e, r, s in zip(dr.eps, dr.ratio, dr.se):
            rows.append((x0[0], x0[1], e, r, s, dr.loccurv))
        worst = max(worst, abs(dr.ratio[-1] / dr.loccurv - 1))
    ok = worst <= float(cfg["rel_tol"])
    return Result(bool(ok), {"max_rel_err_smallest_eps": worst},
                  {"density_ratio.csv": _csv(["x", "y", "eps", "ratio", "se", "loccurv"], rows)})


def run_bilipschitz(cfg, tol):
    u = _surface(cfg)
    K = bd.HoroGraphBody(hc.HoroFrame.standard(3), u)
    eps = _rhos(cfg, "eps")
    rows, ok = [], True
    for x0 in _points(cfg):
        prof = it.bilipschitz_profile(K, x0, tuple(eps), int(cfg["pairs"]), int(cfg["seed"]))
        sc = [r.scaled for r in prof]
        ok = ok and all(b <= a for a, b in zip(sc, sc[1:]))
        rows += [(x0[0], x0[1], r.eps, r.max_rel, r.scaled) for r in prof]
    return Result(bool(ok), {"non_increasing": bool(ok)},
                  {"bilipschitz.csv": _csv(["x", "y", "eps", "max_rel", "scaled"], rows)})


_COMMON = {"seed": 42, "workers": 1, "out": "out"}
_DEFAULT_RHOS = [float(r) for r in tb.DEFAULT_RHOS]

EXPERIMENTS: Dict[str, Experiment] = {e.name: e for e in [
    Experiment("ball-validation", "Monte Carlo tube volumes of a ball against the closed form",
               {"R": 0.8, "samples": 1_000_000, "rhos": [0.1, 0.2, 0.3, 0.4, 0.5]}, run_ball_validation),
    Experiment("steiner-fit", "Fit C_k from tube volumes (body = ball | polytope | horograph)",
               {"body": "ball", "R": 0.8, "m": 200, "body_seed": 0, "domain": 0.6, "center": [0.0, 0.0],
                "eps": 0.3, "samples": 1_000_000, "rhos": _DEFAULT_RHOS}, run_steiner_fit),
    Experiment("convergence", "Curvature measures of polytope hulls converging to a ball",
               {"R": 0.8, "j_grid": [50, 100, 200, 400, 800], "body_seed": 0, "samples": 1_000_000,
                "rhos": _DEFAULT_RHOS}, run_convergence),
    Experiment("gauss-check", "C_2 - C_0 against intrinsic total curvature",
               {"body": "polytope", "R": 0.8, "m": 200, "body_seed": 0, "domain": 0.6, "center": [0.0, 0.0],
                "eps": 0.3, "samples": 1_000_000, "rhos": _DEFAULT_RHOS}, run_gauss_check),
    Experiment("density-ratio", "(C_2 - C_0)/C_0 on shrinking chart discs against LocCurv",
               {"surface": "ball", "R": 0.8, "body_seed": 0, "domain": 0.6, "points": [0.05, -0.02],
                "eps": [0.2, 0.1], "samples": 262144, "rhos": _DEFAULT_RHOS, "rel_tol": 0.1},
               run_density_ratio),
    Experiment("bilipschitz", "Intrinsic distance ratio against the osculating quadratic",
               {"surface": "random", "R": 0.8, "body_seed": 0, "domain": 0.6, "points": [0.05, -0.02],
                "eps": [0.2, 0.1, 0.05], "pairs": 12}, run_bilipschitz),
]}

_INT_KEYS = {"seed", "workers", "samples", "m", "body_seed", "pairs"}


def resolve_config(name: str, file_cfg: Dict[str, object], overrides: Dict[str, object]) -> Dict[str, object]:
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; see list-experiments")
    exp = EXPERIMENTS[name]
    cfg = {**_COMMON, **exp.defaults}
    cfg["experiment"] = name
    for src in (file_cfg, overrides):
        for k, v in src.items():
            if k != "experiment" and k not in cfg and not k.startswith("tol."):
                raise ConfigError(f"unknown key {k!r} for experiment {name}")
            cfg[k] = v
    if cfg["experiment"] != name:
        raise ConfigError(f"config is for experiment {cfg['experiment']!r}, not {name!r}")
    for k in _INT_KEYS & cfg.keys():
        v = cfg[k]
        if isinstance(v, float) and v.is_integer():
            cfg[k] = int(v)
        if not isinstance(cfg[k], int) or isinstance(cfg[k], bool) or cfg[k] < 0:
            raise ConfigError(f"{k} must be a non-negative integer")
    if "rhos" in cfg:
        _rhos(cfg)
    if "eps" in cfg and isinstance(cfg["eps"], list):
        _rhos(cfg, "eps")
    if cfg["workers"] < 1:
        raise ConfigError("workers must be >= 1")
    return cfg


def _tolerances(cfg) -> Tolerances:
    kw = {k[4:]: v for k, v in cfg.items() if k.startswith("tol.")}
    try:
        return DEFAULT.override(**kw)
    except KeyError as e:
        raise ConfigError(str(e)) from None


def version_string() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True,
                             text=True, cwd=Path(__file__).resolve().parent, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _jsonable(o):
    if isinstance(o, dict):
        return {k: _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    return o


def execute(name: str, cfg: Dict[str, object]) -> Result:
    tol = _tolerances(cfg)
    return EXPERIMENTS[name].run(cfg, tol)


def write_artifacts(out: Path, name: str, cfg, res: Result) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for fn, text in res.tables.items():
        (out / fn).write_text(text)
    (out / "config.txt").write_text(format_config(cfg))
    summary = {"experiment": name, "version": version_string(), "pass": res.passed,
               "config": cfg, "metrics": res.metrics, "artifacts": sorted(res.tables)}
    (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# argument handling


def _flag_overrides(extra: List[str]) -> Dict[str, object]:
    out: Dict[str, object] = {}
    i = 0
    while i < len(extra):
        a = extra[i]
        if not a.startswith("--"):
            raise ConfigError(f"argument {i + 1}: unexpected {a!r}")
        key = a[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"argument {i + 1}: flag --{key} needs a value")
            val = extra[i + 1]
            i += 2
        out[key.replace("-", "_") if not key.startswith("tol.") else key] = _parse_value(val, 0, 0)
    return out


def _parser():
    p = argparse.ArgumentParser(prog="hypcurv", description="Curvature-measure experiments in H^3.")
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run one experiment",
                       epilog="Any config key can be overridden as --key value, e.g. --samples 2e5 "
                              "--rhos '[0.1, 0.3]' --tol.newton 1e-12. Precedence: flags > --config file > "
                              "defaults. Exit codes: 0 pass, 1 check failed or numerical failure, 2 usage "
                              "or config error.")
    r.add_argument("experiment")
    r.add_argument("--config", type=Path)
    r.add_argument("--seed", type=int)
    r.add_argument("--workers", type=int)
    r.add_argument("--out", type=str)
    r.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("list-experiments", help="list experiments and their defaults")
    v = sub.add_parser("validate-config", help="parse and check a config file")
    v.add_argument("path", type=Path)
    return p


def _load_file(path: Optional[Path]) -> Dict[str, object]:
    if path is None:
        return {}
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror}") from None
    try:
        return parse_config_text(text)
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from None


def main(argv: Optional[List[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = _parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_PASS
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.cmd == "list-experiments":
            if extra:
                raise ConfigError(f"unexpected arguments {extra}")
            for e in EXPERIMENTS.values():
                print(f"{e.name}: {e.description}")
                for k in sorted(e.defaults):
                    print(f"    {k} = {_fmt(e.defaults[k])}")
            return EXIT_PASS
        if args.cmd == "validate-config":
            if extra:
                raise ConfigError(f"unexpected arguments {extra}")
            raw = _load_file(args.path)
            name = raw.get("experiment")
            if not isinstance(name, str):
                raise ConfigError(f"{args.path}: missing 'experiment' key")
            cfg = resolve_config(name, raw, {})
            _tolerances(cfg)
            sys.stdout.write(format_config(cfg))
            return EXIT_PASS
        over = _flag_overrides(extra)
        for k in ("seed", "workers", "out"):
            if getattr(args, k) is not None:
                over[k] = getattr(args, k)
        cfg = resolve_config(args.experiment, _load_file(args.config), over)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        log.info("running %s", args.experiment)
        res = execute(args.experiment, cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ArithmeticError, RuntimeError, ValueError, np.linalg.LinAlgError) as e:
        print(f"numerical failure in {args.experiment}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAIL
    write_artifacts(Path(str(cfg["out"])), args.experiment, cfg, res)
    print(json.dumps({"experiment": args.experiment, "pass": res.passed, **_jsonable(res.metrics)},
                     sort_keys=True))
    return EXIT_PASS if res.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
