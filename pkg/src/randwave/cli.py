"""Command-line entry points: ``randwave <subcommand> [--config FILE] [--seed S] ...``.

Configuration files are TOML (``key = value`` under ``[section]`` headers).
Unknown sections or keys are rejected; every field that is not set by the file
or a flag is filled from the defaults and marked ``"default"`` in the
provenance map echoed into each report.

Exit status: 0 success, 1 configuration error, 2 runtime failure, 3 a
quantitative check of ``selfcheck`` failed.
"""
from __future__ import annotations

import argparse
import copy
import csv
import datetime as _dt
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from . import data as D
from . import frames as FR
from . import fwm as FW
from . import montecarlo as MC
from . import propagator as P
from .errors import ConfigError, RandwaveError

try:                                    # Python >= 3.11
    import tomllib as _toml
except ModuleNotFoundError:             # pragma: no cover - exercised on 3.10
    import tomli as _toml

SCHEMA_VERSION = 1
SUBCOMMANDS = ("frames", "tails", "mu-scaling", "compare", "dyadic", "knapp", "fwm", "selfcheck")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_ACCEPTANCE = 0, 1, 2, 3

# execution settings kept out of reports so that reruns compare byte for byte
EXECUTION_KEYS = ("run.workers", "run.output_dir")


# ----------------------------------------------------------------------------- configuration

DEFAULTS = {
    "run": {"seed": 0, "workers": 1, "output_dir": "randwave-out", "schema_version": SCHEMA_VERSION},
    "datum": {"generator": "random", "n": 3, "K_max": 8, "seed": 0, "blocks": [1]},
    "plan": {"family": "signs", "angular": True, "radial": False, "cube": False,
             "interval_width": 1.0, "nu_max": -1, "cube_mu": 1.0},
    "norm": {"p": 2.0, "q": 6.0, "T": 4.0, "nt": 17, "backend": "polar", "R_pad": 6.0,
             "lattice_L": 16.0, "lattice_size": 64, "oversample": 4},
    "cover": {"kind": "none", "mu": 1.0, "l": 0, "N_max": 16, "j_min": -3, "j_max": 3},
    "tails": {"trials": 2000, "n_lambda": 32, "lambdas": [], "scale": 1.0},
    "mu": {"mu": [0.5, 0.25, 0.125, 0.0625], "trials": 500, "q": 4.5, "budget_s": 1200.0},
    "dyadic": {"trials": 500, "blocks": [1, 2, 4, 8], "K_max": 2, "L": 2.0, "size": 64, "T": 1.0,
               "nt": 9, "M": 6.0, "s": "1/2", "delta": "1/100", "cube_mu": 1.0, "eps_star": 0.1},
    "knapp": {"delta": 0.5, "t_max": -1.0, "n_t": 17, "trials": 100, "q": 4.5},
    "fwm": {"alpha": 0.125, "L": 10.0, "size": 64, "dt": 0.02, "T": 4.0, "eps": 0.01,
            "s": -1.0, "dealias": "2/3", "save_every": 10, "nonlinear": True,
            "K_max": 2, "eps_list": [], "convergence_dt": -1.0, "checkpoint": ""},
    "frames": {"d": 2, "k_max": 32, "n_frames": 200, "q_list": [4.0, 6.0], "oversample": 4,
               "projector_k_max": 16, "projector_frames": 100},
}



def _check_range(path, value, lo=None, hi=None, lo_open=False, hi_open=False):
    bad = False
    if lo is not None:
        bad |= value <= lo if lo_open else value < lo
    if hi is not None:
        bad |= value >= hi if hi_open else value > hi
    if bad:
        lb = "(" if lo_open else "["
        rb = ")" if hi_open else "]"
        raise ConfigError(f"{path} = {value!r} outside {lb}{lo if lo is not None else '-inf'}, "
                          f"{hi if hi is not None else 'inf'}{rb}")


def _frac(path, v):
    try:
        return Fraction(str(v))
    except (ValueError, ZeroDivisionError) as e:
        raise ConfigError(f"{path} = {v!r} is not a rational number") from e


def _validate(cfg):
    r = cfg["run"]
    if r["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"run.schema_version = {r['schema_version']} unsupported (expected {SCHEMA_VERSION})")
    _check_range("run.workers", r["workers"], 1)
    _check_range("datum.n", cfg["datum"]["n"], 2, 3)
    _check_range("datum.K_max", cfg["datum"]["K_max"], 0, 64)
    if cfg["plan"]["family"] not in D.FAMILIES:
        raise ConfigError(f"plan.family = {cfg['plan']['family']!r} unknown")
    _check_range("plan.interval_width", cfg["plan"]["interval_width"], 0, 1.5, lo_open=True)
    _check_range("plan.cube_mu", cfg["plan"]["cube_mu"], 0, 1, lo_open=True)
    nm = cfg["norm"]
    _check_range("norm.p", nm["p"], 1)
    _check_range("norm.q", nm["q"], 1)
    _check_range("norm.T", nm["T"], 0, lo_open=True)
    _check_range("norm.nt", nm["nt"], 2)
    if nm["backend"] not in ("polar", "lattice"):
        raise ConfigError(f"norm.backend = {nm['backend']!r} unknown")
    cv = cfg["cover"]
    if cv["kind"] not in ("none", "cube", "annulus", "cap", "modulation"):
        raise ConfigError(f"cover.kind = {cv['kind']!r} unknown")
    _check_range("cover.mu", cv["mu"], 0, 1, lo_open=True)
    _check_range("cover.l", cv["l"], 0)
    _check_range("tails.trials", cfg["tails"]["trials"], 1)
    lam = cfg["tails"]["lambdas"]
    if lam and any(b <= a for a, b in zip(lam, lam[1:])):
        raise ConfigError("tails.lambdas must be strictly increasing")
    for i, m in enumerate(cfg["mu"]["mu"]):
        _check_range(f"mu.mu[{i}]", m, 0, 1, lo_open=True)
    if len(cfg["mu"]["mu"]) < 3:
        raise ConfigError("mu.mu needs at least 3 values")
    _check_range("mu.trials", cfg["mu"]["trials"], 1)
    dy = cfg["dyadic"]
    _frac("dyadic.s", dy["s"])
    _check_range("dyadic.delta", _frac("dyadic.delta", dy["delta"]), 0, lo_open=True)
    _check_range("dyadic.eps_star", dy["eps_star"], 0, lo_open=True)
    _check_range("dyadic.cube_mu", dy["cube_mu"], 0, 1, lo_open=True)
    _check_range("knapp.delta", cfg["knapp"]["delta"], 0, math.pi, lo_open=True)
    fw = cfg["fwm"]
    _check_range("fwm.alpha", fw["alpha"], 0, 0.25, lo_open=True, hi_open=True)
    _check_range("fwm.dt", fw["dt"], 0, lo_open=True)
    fr = cfg["frames"]
    _check_range("frames.d", fr["d"], 1, 2)
    _check_range("frames.k_max", fr["k_max"], 1, 64)
    _check_range("frames.n_frames", fr["n_frames"], 1)
    return cfg


def _coerce(path, default, value):
    """Type-check ``value`` against the default's type (ints may widen to floats)."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path} must be true or false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, (str, int, float)) or isinstance(value, bool):
            raise ConfigError(f"{path} must be a string, got {value!r}")
        return str(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{path} must be a list, got {value!r}")
        proto = default[0] if default else (0.0 if path.endswith(("lambdas", "eps_list")) else None)
        if proto is None:
            return list(value)
        return [_coerce(f"{path}[{i}]", proto, v) for i, v in enumerate(value)]
    return value


@dataclass
class Config:
    values: dict
    provenance: dict

    def section(self, name):
        return self.values[name]

    def echo(self, results_only=False):
        """Values and provenance; ``results_only`` drops keys that cannot change the results."""
        vals = copy.deepcopy(self.values)
        prov = dict(self.provenance)
        if results_only:
            for path in EXECUTION_KEYS:
                sec, key = path.split(".", 1)
                vals[sec].pop(key, None)
                prov.pop(path, None)
        return {"values": vals, "provenance": prov}


def parse_config(mapping, overrides=None, origin="file"):
    """Validated :class:`Config` from a nested mapping plus flag overrides ``{"sec.key": value}``."""
    mapping = mapping or {}
    if not isinstance(mapping, dict):
        raise ConfigError("configuration must be a table of sections")
    values, prov = {}, {}
    for sec in mapping:
        if sec not in DEFAULTS:
            raise ConfigError(f"unknown section [{sec}]")
        if not isinstance(mapping[sec], dict):
            raise ConfigError(f"[{sec}] must be a table")
        for key in mapping[sec]:
            if key not in DEFAULTS[sec]:
                raise ConfigError(f"unknown key {sec}.{key}")
    for sec, keys in DEFAULTS.items():
        values[sec] = {}
        for key, dflt in keys.items():
            path = f"{sec}.{key}"
            if key in mapping.get(sec, {}):
                values[sec][key] = _coerce(path, dflt, mapping[sec][key])
                prov[path] = origin
            else:
                values[sec][key] = copy.deepcopy(dflt)
                prov[path] = "default"
    for path, v in (overrides or {}).items():
        if v is None:
            continue
        sec, key = path.split(".", 1)
        values[sec][key] = _coerce(path, DEFAULTS[sec][key], v)
        prov[path] = "flag"
    return Config(_validate(values), prov)


def parse_echo(echo):
    """Rebuild a :class:`Config` from :meth:`Config.echo` (round trip)."""
    cfg = parse_config({}, None)
    for path, origin in echo["provenance"].items():
        sec, key = path.split(".", 1)
        cfg.values[sec][key] = _coerce(path, DEFAULTS[sec][key], echo["values"][sec][key])
        cfg.provenance[path] = origin
    _validate(cfg.values)
    return cfg


def load_config(path=None, overrides=None):
    """Read a TOML file (or nothing) and return a validated :class:`Config`."""
    mapping = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            mapping = _toml.loads(p.read_text(encoding="utf-8"))
        except _toml.TOMLDecodeError as e:
            raise ConfigError(f"malformed config {path}: {e}") from e
    return parse_config(mapping, overrides)


# ----------------------------------------------------------------------------- reports


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    version: str
    started: str
    finished: str
    outputs: list = field(default_factory=list)
    digests: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def to_dict(self):
        return {"command": self.command, "config": self.config, "seed": self.seed,
                "version": self.version, "started": self.started, "finished": self.finished,
                "timing": dict(self.timing), "outputs": list(self.outputs), "digests": dict(self.digests)}

    def verify(self):
        """True when every listed output still has its recorded digest."""
        return all(_sha256(Path(p)) == self.digests.get(p) for p in self.outputs)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def dumps_report(doc):
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def dumps_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def report_document(command, cfg: Config, result: MC.ExperimentResult):
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "tool_version": __version__,
        "seed": cfg.values["run"]["seed"],
        "config": cfg.echo(results_only=True),
        "conventions": CONVENTIONS,
        "passed": result.passed,
        "results": result.report,
    }


CONVENTIONS = {
    "fourier": "f^(xi) = int f(x) exp(-2 pi i x.xi) dx, frequencies in cycles",
    "propagator": "u(t) = exp(-i t sqrt(-Lap)) f",
    "log_bracket": "<log N> = sqrt(1 + (ln N)^2)",
    "zero_mode": "|grad|^-alpha maps the zero mode to 0",
    "time_window": "norms over t in [-T, T] with trapezoid weights",
}


def write_report(command, cfg: Config, result: MC.ExperimentResult, out_dir, started=None):
    """Write ``<command>.json``, ``<command>.csv`` and ``<command>.manifest.json`` atomically."""
    out = Path(out_dir)
    stem = command.replace("-", "_")
    started = started or _now()
    jpath = out / f"{stem}.json"
    cpath = out / f"{stem}.csv"
    _atomic_write(jpath, dumps_report(report_document(command, cfg, result)))
    _atomic_write(cpath, dumps_csv(result.csv_header, result.csv_rows))
    outputs = [str(jpath), str(cpath)]
    man = RunManifest(command, cfg.echo(), cfg.values["run"]["seed"], __version__, started, _now(),
                      outputs, {p: _sha256(Path(p)) for p in outputs},
                      {"elapsed_s": result.elapsed, **result.extra.get("timing", {})})
    _atomic_write(out / f"{stem}.manifest.json", dumps_report(man.to_dict()))
    return man


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def schema_path():
    return Path(__file__).with_name("schema") / "report.schema.json"


# ----------------------------------------------------------------------------- experiments


def _plan(cfg: Config):
    pl = cfg.section("plan")
    return D.RandomPlan(family=pl["family"], angular=pl["angular"], radial=pl["radial"],
                        cube=pl["cube"], master_seed=cfg.values["run"]["seed"],
                        interval_width=pl["interval_width"],
                        nu_max=None if pl["nu_max"] < 0 else pl["nu_max"], cube_mu=pl["cube_mu"])


def _norm(cfg: Config, **over):
    nm = dict(cfg.section("norm"))
    cv = cfg.section("cover")
    cover = None
    if cv["kind"] != "none":
        keys = {"cube": ("mu",), "annulus": ("N_max",), "cap": ("l",), "modulation": ("j_min", "j_max")}
        cover = {"kind": cv["kind"], **{k: cv[k] for k in keys[cv["kind"]]}}
    nm.update(over)
    return MC.NormSpec(cover=cover, **nm)


def _datum_spec(cfg: Config):
    ds = dict(cfg.section("datum"))
    ds["blocks"] = tuple(ds["blocks"])
    return ds


def _experiment_config(cfg: Config, trials, norm=None, **over):
    t = cfg.section("tails")
    kw = dict(datum=_datum_spec(cfg), plan=_plan(cfg), trials=trials, norm=norm or _norm(cfg),
              lambdas=tuple(t["lambdas"]) or None, n_lambda=t["n_lambda"],
              seed=cfg.values["run"]["seed"], scale=t["scale"])
    kw.update(over)
    return MC.ExperimentConfig(**kw)


def run_tails(cfg: Config):
    ec = _experiment_config(cfg, cfg.section("tails")["trials"])
    return MC.tail_experiment(ec, workers=cfg.values["run"]["workers"])


def run_mu(cfg: Config):
    m = cfg.section("mu")
    ec = _experiment_config(cfg, m["trials"], _norm(cfg, q=m["q"], backend="lattice"))
    budget = m["budget_s"] if m["budget_s"] > 0 else None
    return MC.mu_scaling_experiment(ec, m["mu"], workers=cfg.values["run"]["workers"], budget_s=budget)


def run_compare(cfg: Config):
    return MC.comparison_report()


def run_dyadic(cfg: Config):
    dy = cfg.section("dyadic")
    spec = MC.DyadicSpec(blocks=tuple(dy["blocks"]), K_max=dy["K_max"], L=dy["L"], size=dy["size"],
                         T=dy["T"], nt=dy["nt"], M=dy["M"], s=Fraction(dy["s"]),
                         delta=Fraction(dy["delta"]), cube_mu=dy["cube_mu"])
    ec = _experiment_config(cfg, dy["trials"], eps_star=dy["eps_star"])
    return MC.dyadic_weight_experiment(ec, spec, workers=cfg.values["run"]["workers"])


def run_knapp(cfg: Config):
    k = cfg.section("knapp")
    delta = k["delta"]
    d = MC.knapp_datum(delta)
    t_max = k["t_max"] if k["t_max"] > 0 else 1.0 / (4.0 * delta ** 2)
    times = np.linspace(0.0, t_max, k["n_t"])
    _, ratio, u0 = MC.tube_coherence(d, times)
    sep = MC.knapp_separation(delta, trials=k["trials"], seed=cfg.values["run"]["seed"], q=k["q"],
                              workers=cfg.values["run"]["workers"])
    report = {"experiment": "knapp", "delta": delta, "K": d.K_max, "l2_norm": d.l2_norm(),
              "coherence": {"t": times.tolist(), "ratio": ratio.tolist(), "u0_abs": abs(u0),
                            "min_ratio": float(ratio.min())},
              "separation": sep}
    rows = [[float(t), float(r)] for t, r in zip(times, ratio)]
    ok = bool(ratio.min() >= 0.5 and sep["separated"])
    return MC.ExperimentResult("knapp", report, ["t", "ratio"], rows, ok)


def _fwm_config(cfg: Config):
    fw = cfg.section("fwm")
    return FW.FwmConfig(alpha=fw["alpha"], L=fw["L"], size=fw["size"], dt=fw["dt"], T=fw["T"],
                        eps=fw["eps"], s=None if fw["s"] < 0 else fw["s"], dealias=fw["dealias"],
                        save_every=fw["save_every"], nonlinear=fw["nonlinear"])


def run_fwm(cfg: Config):
    fw = cfg.section("fwm")
    fc = _fwm_config(cfg)
    datum = D.random_datum(3, fw["K_max"], cfg.section("datum")["seed"])
    lat = P.Lattice(3, fc.L, fc.size)
    F = P.rasterize(datum, lat)
    traj = FW.solve_fwm(fc, F, lat)
    diag = FW.decoupling_diagnostic(traj)
    report = {"experiment": "fwm", "fwm": fc.to_dict(), "s_alpha": str(FW.s_alpha(Fraction(fc.alpha).limit_denominator(1000))),
              "decoupling": diag}
    if fw["eps_list"]:
        report["quadratic_scaling"] = FW.quadratic_scaling_fit(fc, F, lat, fw["eps_list"])
    if fw["convergence_dt"] > 0:
        report["step_convergence"] = FW.step_convergence(replace(fc, dt=fw["convergence_dt"], T=1.0,
                                                                 eps=1.0), F, lat)
    if fw["checkpoint"]:
        FW.save_trajectory(traj, fw["checkpoint"])
    rows = [[r["t"], r["v"], r["u_l2"]] for r in diag["rows"]]
    ok = diag["ratio"] <= 0.1 and diag["blowup"] is None
    return MC.ExperimentResult("fwm", report, ["t", "v_norm", "u_l2"], rows, bool(ok))


def run_frames(cfg: Config):
    fr = cfg.section("frames")
    seed = cfg.values["run"]["seed"]
    ks = list(range(1, fr["k_max"] + 1))
    ens = FR.frame_ensemble(fr["d"], ks, fr["n_frames"], fr["q_list"], seed, fr["oversample"])
    summary = FR.good_frame_summary(ens, ks, q=4.0 if 4.0 in fr["q_list"] else fr["q_list"][0])
    proj = projector_check(fr["d"], fr["projector_k_max"], fr["projector_frames"], seed)
    rows = []
    for q in sorted(ens):
        med = np.median(ens[q], axis=0)
        mx = ens[q].max(axis=0)
        rows += [[FR._qkey(q), k, float(a), float(b)] for k, a, b in zip(ks, med, mx)]
    report = {"experiment": "frames", "summary": summary, "projector": proj,
              "ensemble": {FR._qkey(q): v.tolist() for q, v in sorted(ens.items())}}
    ok = abs(summary["lq_slope"]) <= 0.1 and summary["linf_trend"] is not None and summary["linf_trend"] <= 0.15 and proj["max_deviation"] < 1e-8
    return MC.ExperimentResult("frames", report, ["q", "k", "median_max_norm", "max_max_norm"], rows,
                               bool(ok))


def projector_check(d, k_max, n_frames, seed):
    """Largest node-wise deviation of ``sum_l |b_l|^2`` from ``N_k / Vol`` over Haar frames."""
    from .sphere import sphere_quadrature, standard_basis
    worst = 0.0
    for k in range(k_max + 1):
        grid = sphere_quadrature(d, max(k, 1))
        basis = standard_basis(d, k, grid)
        target = FR.projector_constant(d, k)
        for i in range(n_frames):
            Q = FR.sample_haar_orthogonal(basis.dim, seed, k, i)
            diag = FR.projector_diagonal(FR.make_frame(basis, Q))
            worst = max(worst, float(np.abs(diag - target).max()))
    return {"d": d, "k_max": k_max, "n_frames": n_frames, "max_deviation": worst}


def run_selfcheck(cfg: Config, quick=False):
    """Exact identities (projector, Plancherel, null form); the full run adds oracle checks."""
    checks = []
    seed = cfg.values["run"]["seed"]

    def add(name, value, tol, passed=None):
        ok = value < tol if passed is None else passed
        checks.append({"check": name, "value": float(value), "tolerance": tol, "pass": bool(ok)})

    proj = projector_check(2, 16 if not quick else 8, 100 if not quick else 5, seed)
    add("projector_diagonal", proj["max_deviation"], 1e-8)
    worst = 0.0
    lat = P.Lattice(3, 8.0, 32) if quick else P.Lattice(3, 16.0, 64)
    for j in range(2 if quick else 5):
        d = D.random_datum(3, 4, seed + j)
        F = P.rasterize(d, lat)
        worst = max(worst, abs(float(np.sum(np.abs(F) ** 2)) * lat.L ** 3 / d.l2_norm() ** 2 - 1.0))
    add("plancherel", worst, 0.01)
    add("null_form_plane_wave", FW.plane_wave_null_residual(), 1e-10)
    add("mgf_signs", 0.0, 1.0, D.verify_moment_bound(D.RandomPlan(), [0.5, 1.0, 2.0], 20000, seed)["pass"])
    if not quick:
        d = D.random_datum(3, 4, seed)
        lat = P.Lattice(3, 16.0, 64)
        F = P.rasterize(d, lat)
        pts = np.array([[0.3, -0.2, 0.4], [1.5, 0.5, -1.0], [-2.0, 1.0, 0.5]])
        for t in (0.0, 1.0, 2.0):
            a = P.evaluate_at(d, [t], pts)[0]
            xi = lat.xi_mesh()
            b = np.array([np.sum(F * np.exp(2j * np.pi * (xi[0] * p[0] + xi[1] * p[1] + xi[2] * p[2]
                                                         - lat.xi_norm() * t))) for p in pts])
            add(f"bessel_vs_plane_wave_t{t:g}", float(np.abs(a - b).max() / np.abs(b).max()), 1e-6)
    passed = all(c["pass"] for c in checks)
    rows = [[c["check"], c["value"], c["tolerance"], c["pass"]] for c in checks]
    return MC.ExperimentResult("selfcheck", {"experiment": "selfcheck", "quick": quick, "checks": checks},
                               ["check", "value", "tolerance", "pass"], rows, passed)


RUNNERS = {"frames": run_frames, "tails": run_tails, "mu-scaling": run_mu, "compare": run_compare,
           "dyadic": run_dyadic, "knapp": run_knapp, "fwm": run_fwm}


# ----------------------------------------------------------------------------- dispatch


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser():
    p = _Parser(prog="randwave", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"randwave {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="TOML configuration file")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--workers", type=int, help="worker processes (default: RANDWAVE_WORKERS or 1)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--trials", type=int)
        if name == "mu-scaling":
            sp.add_argument("--mu", help="comma-separated cube sides")
            sp.add_argument("--budget", type=float, help="runtime budget in seconds (<= 0 disables)")
        if name == "selfcheck":
            sp.add_argument("--quick", action="store_true")
    return p


def _overrides(args):
    ov = {"run.seed": args.seed, "run.output_dir": args.out}
    workers = args.workers
    if workers is None and "RANDWAVE_WORKERS" in os.environ:
        workers = int(os.environ["RANDWAVE_WORKERS"])
    ov["run.workers"] = workers
    if args.trials is not None:
        sec = {"tails": "tails", "mu-scaling": "mu", "dyadic": "dyadic", "knapp": "knapp",
               "frames": "frames"}.get(args.command)
        if sec == "frames":
            ov["frames.n_frames"] = args.trials
        elif sec:
            ov[f"{sec}.trials"] = args.trials
    if args.command == "mu-scaling":
        if args.mu:
            try:
                ov["mu.mu"] = [float(x) for x in args.mu.split(",") if x.strip()]
            except ValueError as e:
                raise ConfigError(f"--mu: {e}") from e
        if args.budget is not None:
            ov["mu.budget_s"] = float(args.budget)
    return ov


def dispatch(argv=None):
    """Run one subcommand; returns the exit status."""
    started = _now()
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config, _overrides(args))
    except ConfigError as e:
        print(f"randwave: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "selfcheck":
            result = run_selfcheck(cfg, quick=args.quick)
        else:
            result = RUNNERS[args.command](cfg)
        man = write_report(args.command, cfg, result, cfg.values["run"]["output_dir"], started)
        if not man.verify():
            raise RandwaveError("written reports do not match their digests")
    except ConfigError as e:
        print(f"randwave: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:          # surfaced as a runtime failure with its type
        print(f"randwave: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    status = "pass" if result.passed else ("fail" if result.passed is not None else "n/a")
    print(f"{args.command}: {status}; reports in {cfg.values['run']['output_dir']}")
    if args.command == "selfcheck" and not result.passed:
        return EXIT_ACCEPTANCE
    return EXIT_OK


def main(argv=None):
    sys.exit(dispatch(argv))


if __name__ == "__main__":        # pragma: no cover
    main()
