"""Command-line front end.

Every subcommand reads its options from an optional JSON config file
(``--config``), overridden by explicit command-line flags.  Results are
written atomically; CSV uses 17 significant digits, reports are JSON.

Exit codes: 0 success, 2 validation error, 3 tolerance failure,
4 conditioning alarm.
"""
from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys
import tempfile
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import C2MMError, ToleranceError, ValidationError
from .model import ModelSpec, load_spec

__all__ = ["main", "run", "write_atomic", "csv_text", "json_text", "COMMANDS"]


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def write_atomic(path: str, data) -> None:
    """Write ``data`` (str or bytes) to ``path`` through a temp file and rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(prefix=".c2mm-", dir=d)
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def csv_text(header: Sequence[str], rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [_plain(float(obj.real)), _plain(float(obj.imag))]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def json_text(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def _svg_bytes(draw: Callable) -> bytes:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "c2mm", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        draw(fig, ax)
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# option parsing
# ---------------------------------------------------------------------------

def _floats(s) -> List[float]:
    if isinstance(s, (list, tuple)):
        return [float(v) for v in s]
    try:
        return [float(v) for v in str(s).split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"expected a comma-separated list of numbers, got {s!r}")


def _ints(s) -> List[int]:
    vals = _floats(s)
    if any(v != int(v) for v in vals):
        raise ValidationError(f"expected integers, got {s!r}")
    return [int(v) for v in vals]


def _pair(s) -> Tuple[float, float]:
    v = _floats(s)
    if len(v) != 2:
        raise ValidationError(f"expected two numbers 'a,b', got {s!r}")
    return v[0], v[1]


def _num(kind):
    def conv(v):
        try:
            return kind(v)
        except (TypeError, ValueError):
            raise ValidationError(f"expected {kind.__name__}, got {v!r}")
    return conv


STR, INT, FLOAT, FLAG = str, _num(int), _num(float), "flag"

# shared option groups: name -> (converter, default, help)
SPEC = {"spec": (STR, None, "model spec JSON file")}
OUT = {"out": (STR, None, "output path (stdout when omitted)")}
PREC = {"precision": (STR, "extended", "standard or extended working precision")}
PLOT = {"emit_plot": (STR, None, "also write an SVG figure to this path")}

COMMANDS: Dict[str, Dict[str, tuple]] = {
    "biortho": {**SPEC, **OUT, **PREC,
                "degree": (INT, 16, "number of degrees 0..d-1"),
                "check": (STR, "", "comma list of mop1,mop2"),
                "tol": (FLOAT, 1e-8, "biorthogonality tolerance"),
                "mop_tol": (FLOAT, 1e-7, "scaled MOP residual tolerance")},
    "kernel": {**SPEC, **OUT, **PREC, **PLOT,
               "density": (STR, "default", "'default', a JSON grid file or a comma list"),
               "gap": (STR, None, "gap interval 'a,b'"),
               "m": (INT, 32, "Nystrom order for the gap")},
    "scaling": {**SPEC, **OUT, **PREC,
                "regime": (STR, "bulk", "bulk, soft or hard"),
                "location": (FLOAT, None, "bulk point or soft edge"),
                "window": (STR, "-2,1", "scaled window 'a,b'"),
                "points": (INT, 9, "points per axis")},
    "ode-check": {**SPEC, **OUT,
                  "points": (STR, None, "JSON file with [re, im] pairs"),
                  "jumps": (STR, "-1.5,-0.7,0.7,1.5", "real points for jump checks"),
                  "asymptotics": (FLAG, False, "also fit the large-z prefactors"),
                  "tol": (FLOAT, 1e-7, "residual tolerance")},
    "density": {**SPEC, **OUT, **PREC, **PLOT,
                "n": (STR, "9,18,36", "comma list of n"),
                "grid": (STR, "default", "'default', a JSON grid file or a comma list"),
                "report": (STR, None, "JSON report path")},
    "phase": {**OUT,
              "alpha": (FLOAT, None, "alpha"),
              "tau": (FLOAT, None, "tau")},
    "phase-map": {**OUT, **PLOT,
                  "alpha_range": (STR, "-4,2", "alpha range 'a,b'"),
                  "tau_range": (STR, "0.05,2.5", "tau range 'a,b'"),
                  "n_alpha": (INT, 61, "alpha samples"),
                  "n_tau": (INT, 61, "tau samples")},
    "gamma": {**OUT,
              "alpha": (FLOAT, None, "alpha"),
              "tau": (FLOAT, None, "tau"),
              "a": (FLOAT, None, "path parameter a (expansion fit)"),
              "b": (FLOAT, None, "path parameter b (expansion fit)")},
    "triple": {**OUT, **PREC,
               "a": (FLOAT, 0.0, "path parameter a"),
               "b": (FLOAT, 0.0, "path parameter b"),
               "n": (STR, "9,18,36", "comma list of n"),
               "grid": (STR, "0.5,1,2", "scaled grid"),
               "nu": (FLOAT, 0.0, "nu")},
    "sample": {**SPEC, **OUT,
               "mode": (STR, "gaussian", "gaussian or mcmc"),
               "count": (INT, 10000, "number of configurations"),
               "seed": (INT, 0, "random seed"),
               "chains": (INT, 4, "independent chains"),
               "burn_in": (INT, 2000, "MCMC burn-in sweeps"),
               "step": (FLOAT, 0.3, "initial MCMC step")},
    "compare": {**SPEC, **OUT, **PREC,
                "mode": (STR, "gaussian", "gaussian or mcmc"),
                "count": (INT, 10000, "number of configurations"),
                "seed": (INT, 0, "random seed"),
                "chains": (INT, 4, "independent chains"),
                "burn_in": (INT, 2000, "MCMC burn-in sweeps"),
                "step": (FLOAT, 0.3, "initial MCMC step"),
                "ks_max": (FLOAT, None, "fail when the KS distance exceeds this")},
    "gap": {**SPEC, **OUT, **PREC,
            "interval": (STR, None, "interval 'a,b'"),
            "m": (INT, 32, "Nystrom order")},
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="c2mm", description="Chiral two-matrix model toolkit.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, opts in COMMANDS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=argparse.SUPPRESS, help="JSON config merged under flags")
        for key, (conv, _, hlp) in opts.items():
            flag = "--" + key.replace("_", "-")
            if conv == FLAG:
                sp.add_argument(flag, dest=key, action="store_true", default=argparse.SUPPRESS, help=hlp)
            else:
                sp.add_argument(flag, dest=key, default=argparse.SUPPRESS, help=hlp)
    return p


def _merge(command: str, cli: dict) -> dict:
    """Defaults, then config file, then explicit flags; unknown config keys are rejected."""
    opts = COMMANDS[command]
    cfg = {}
    path = cli.pop("config", None)
    if path is not None:
        try:
            with open(path) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}")
        if not isinstance(cfg, dict):
            raise ValidationError("config must be a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = sorted(set(cfg) - set(opts))
        if unknown:
            raise ValidationError(f"unknown config keys for {command}: {unknown}")
    merged = {k: d for k, (_, d, _) in opts.items()}
    merged.update(cfg)
    merged.update(cli)
    out = {}
    for k, v in merged.items():
        conv = opts[k][0]
        if v is None or conv in (STR, FLAG):
            out[k] = v if conv != FLAG else bool(v)
        else:
            out[k] = conv(v)
    if "precision" in out and out["precision"] not in ("standard", "extended"):
        raise ValidationError("precision must be 'standard' or 'extended'")
    return out


def _require(cfg: dict, *keys):
    for k in keys:
        if cfg.get(k) is None:
            raise ValidationError(f"--{k.replace('_', '-')} is required")


def _spec(cfg: dict) -> ModelSpec:
    _require(cfg, "spec")
    return load_spec(cfg["spec"])


def _emit(cfg: dict, text: str) -> None:
    if cfg.get("out"):
        write_atomic(cfg["out"], text)
    else:
        sys.stdout.write(text)


def _grid_arg(value, default: Callable[[], np.ndarray]) -> np.ndarray:
    if value in (None, "default"):
        return default()
    if isinstance(value, list):
        return np.asarray(value, dtype=float)
    if os.path.exists(value):
        try:
            with open(value) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read grid {value}: {exc}")
        if isinstance(data, dict):
            if "grid" not in data:
                raise ValidationError("grid file needs a 'grid' key")
            data = data["grid"]
        return np.asarray(data, dtype=float)
    return np.asarray(_floats(value), dtype=float)


def _builder(cfg: dict):
    from .kernel import build_kernel

    return lambda spec: build_kernel(spec, cfg.get("precision", "extended"))


def _quantile_point(ke, q: float) -> float:
    from .mcsim import kernel_cdf

    F, _ = kernel_cdf(ke)
    X = ke.support_bound()
    xs = np.linspace(0.0, X, 4001)
    return float(xs[min(np.searchsorted(F(xs), q), len(xs) - 1)])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_biortho(cfg: dict) -> int:
    from .biortho import build_system, check_mop

    spec = _spec(cfg)
    d = cfg["degree"]
    if d < 1:
        raise ValidationError("degree must be positive")
    sys_ = build_system(spec, d, cfg["precision"])
    report = sys_.to_dict()
    res = sys_.biorth_residual()
    report["biorth_residual"] = res
    report["log10_condition"] = sys_.bimoments.log10_condition()
    checks = [c.strip().upper() for c in cfg["check"].split(",") if c.strip()]
    worst_mop = 0.0
    for c in checks:
        r = check_mop(sys_, c)
        report[c.lower()] = r.to_dict()
        worst_mop = max(worst_mop, r.max_residual)
    _emit(cfg, json_text(report))
    if res > cfg["tol"]:
        raise ToleranceError(f"biorthogonality residual {res:.3e} exceeds {cfg['tol']:.1e}")
    if worst_mop > cfg["mop_tol"]:
        raise ToleranceError(f"MOP residual {worst_mop:.3e} exceeds {cfg['mop_tol']:.1e}")
    return 0


def cmd_kernel(cfg: dict) -> int:
    from .kernel import GapRequest, gap_probability, mean_density

    spec = _spec(cfg)
    ke = _builder(cfg)(spec)

    def default():
        hi = _quantile_point(ke, 1 - 1e-12)
        h = hi / 400
        return (np.arange(400) + 0.5) * h

    xs, rho = mean_density(ke, _grid_arg(cfg["density"], default))
    header, cols = ["x", "rho_n"], [xs, rho]
    if cfg["gap"] is not None:
        a, b = _pair(cfg["gap"])
        e0 = gap_probability(ke, GapRequest(a, b, cfg["m"]))
        header += ["gap_a", "gap_b", "E0"]
        cols += [np.full(xs.shape, a), np.full(xs.shape, b), np.full(xs.shape, e0)]
    _emit(cfg, csv_text(header, zip(*cols)))
    if cfg["emit_plot"]:
        def draw(fig, ax):
            ax.plot(xs, rho, color="C0")
            ax.set_xlabel("x")
            ax.set_ylabel("rho_n(x)")
            ax.set_title(f"mean density, n = {spec.n}")
        write_atomic(cfg["emit_plot"], _svg_bytes(draw))
    return 0


def cmd_scaling(cfg: dict) -> int:
    from .kernel import scaling_limit_compare

    spec = _spec(cfg)
    regime = {"bulk": "bulk", "soft": "soft_edge", "hard": "hard_edge"}.get(cfg["regime"])
    if regime is None:
        raise ValidationError("regime must be bulk, soft or hard")
    ke = _builder(cfg)(spec)
    rep = scaling_limit_compare(ke, regime, cfg["location"], _pair(cfg["window"]), cfg["points"])
    _emit(cfg, json_text(rep))
    return 0


DEFAULT_ODE_POINTS = [complex(r * math.cos(t), r * math.sin(t))
                      for r in (0.3, 0.8, 1.5, 3.0, 6.0)
                      for t in (0.35, 1.3, 2.4, -0.9)]


def cmd_ode_check(cfg: dict) -> int:
    from . import ode3

    spec = _spec(cfg)
    if spec.alpha is None:
        raise ValidationError("ode-check needs W(y) = y^2/2 + alpha y")
    pts = DEFAULT_ODE_POINTS
    if cfg["points"]:
        try:
            with open(cfg["points"]) as fh:
                raw = json.load(fh)
            pts = [complex(p[0], p[1]) for p in raw]
        except (OSError, json.JSONDecodeError, TypeError, IndexError) as exc:
            raise ValidationError(f"cannot read points {cfg['points']}: {exc}")
    if any(z.imag == 0 for z in pts):
        raise ValidationError("test points must lie off the real line")
    tr = ode3.SolutionTriple(spec)
    rows = []
    worst = 0.0
    for z in pts:
        res = [ode3.ode_residual(spec, tr.handle(j), z) for j in range(3)]
        worst = max(worst, *res)
        rows.append({"z": z, "p0": res[0], "p1": res[1], "p2": res[2]})
    jumps = []
    for x in _floats(cfg["jumps"]):
        j = ode3.jump_residuals(tr, x)
        worst = max(worst, *j.values())
        jumps.append({"x": x, **j})
    exponent = 2 - 2 * spec.nu
    wz = [z for z in pts if abs(z) >= 0.5][:5]
    wvals = [ode3.wronskian_det(tr, z) * z ** exponent for z in wz]
    mean = sum(wvals) / len(wvals)
    spread = max(abs(v - mean) for v in wvals) / abs(mean)
    worst = max(worst, spread)
    report = {"spec": spec.to_dict(), "residuals": rows, "jumps": jumps,
              "wronskian": {"points": wz, "scaled_det": wvals, "rel_spread": spread},
              "max_defect": worst}
    if cfg["asymptotics"]:
        report["asymptotics"] = [ode3.asymptotic_match(spec, j, angle)
                                 for j in range(3) for angle in (math.pi / 3, -math.pi / 3)]
    _emit(cfg, json_text(report))
    if worst > cfg["tol"]:
        raise ToleranceError(f"largest defect {worst:.3e} exceeds {cfg['tol']:.1e}")
    return 0


def cmd_density(cfg: dict) -> int:
    from .equilibrium import density_extrapolate

    spec = _spec(cfg)
    n_list = _ints(cfg["n"])
    builder = _builder(cfg)

    def default():
        ke = builder(spec.replace(n=min(n_list)))
        hi = _quantile_point(ke, 0.995)
        return np.linspace(0.02, 1.0, 50) * hi

    grid = _grid_arg(cfg["grid"], default)
    est = density_extrapolate(spec, n_list, grid, builder=builder)
    header = ["x"] + [f"rho_{n}" for n in est.n_list] + ["rho", "error"]
    cols = [est.grid] + [est.rho_n[n] for n in est.n_list] + [est.rho, est.error]
    _emit(cfg, csv_text(header, zip(*cols)))
    if cfg["report"]:
        write_atomic(cfg["report"], json_text(est.to_dict()))
    if cfg["emit_plot"]:
        def draw(fig, ax):
            for n in est.n_list:
                ax.plot(est.grid, est.rho_n[n], lw=1, label=f"n = {n}")
            ax.plot(est.grid, est.rho, "k--", lw=1.5, label="extrapolated")
            ax.set_xlabel("x")
            ax.set_ylabel("density")
            ax.legend()
        write_atomic(cfg["emit_plot"], _svg_bytes(draw))
    return 0


def cmd_phase(cfg: dict) -> int:
    from .phase import classify

    _require(cfg, "alpha", "tau")
    pt = classify(cfg["alpha"], cfg["tau"])
    sys.stdout.write(pt.case + "\n")
    sys.stdout.write(f"dist_ab={_fmt(pt.dist_ab)} dist_c={_fmt(pt.dist_c)} "
                     f"dist_multicritical={_fmt(pt.dist_multicritical)} "
                     f"gamma={'none' if pt.gamma is None else _fmt(pt.gamma)}\n")
    if cfg["out"]:
        write_atomic(cfg["out"], json_text(pt.to_dict()))
    return 0


def cmd_phase_map(cfg: dict) -> int:
    from .phase import phase_map

    pm = phase_map(_pair(cfg["alpha_range"]), _pair(cfg["tau_range"]), cfg["n_alpha"], cfg["n_tau"])
    rows = [(a, t, pm["labels"][i][k]) for i, t in enumerate(pm["tau"]) for k, a in enumerate(pm["alpha"])]
    _emit(cfg, csv_text(["alpha", "tau", "case"], rows))
    if cfg["emit_plot"]:
        names = ["I", "II", "III", "IV", "CurveAB", "CurveC", "Multicritical"]
        code = np.array([[names.index(c) for c in row] for row in pm["labels"]], dtype=float)

        def draw(fig, ax):
            al, ta = pm["alpha"], pm["tau"]
            im = ax.imshow(code, origin="lower", aspect="auto", cmap="tab10", vmin=0, vmax=9,
                           extent=(al[0], al[-1], ta[0], ta[-1]), interpolation="nearest")
            ax.set_xlabel("alpha")
            ax.set_ylabel("tau")
            for i in range(4):
                ax.plot([], [], "s", color=im.cmap(im.norm(i)), label=names[i])
            ax.legend(loc="upper right", fontsize=8)
        write_atomic(cfg["emit_plot"], _svg_bytes(draw))
    return 0


def cmd_gamma(cfg: dict) -> int:
    from .phase import gamma_expansion_fit, solve_gamma

    if cfg["a"] is not None or cfg["b"] is not None:
        _require(cfg, "a", "b")
        rep = gamma_expansion_fit(cfg["a"], cfg["b"])
        _emit(cfg, json_text(rep))
        return 0
    _require(cfg, "alpha", "tau")
    g = solve_gamma(cfg["alpha"], cfg["tau"])
    if cfg["out"]:
        write_atomic(cfg["out"], json_text({"alpha": cfg["alpha"], "tau": cfg["tau"], "gamma": g}))
    sys.stdout.write(_fmt(g) + "\n")
    return 0


def cmd_triple(cfg: dict) -> int:
    from .phase import ScalingPath, triple_scaling_probe

    path = ScalingPath(cfg["a"], cfg["b"], tuple(_ints(cfg["n"])))
    rep = triple_scaling_probe(path, _floats(cfg["grid"]), cfg["nu"], builder=_builder(cfg))
    _emit(cfg, json_text(rep))
    return 0


def _draw_samples(cfg: dict, spec: ModelSpec):
    from .mcsim import sample_gaussian, sample_mcmc

    if cfg["mode"] == "gaussian":
        return sample_gaussian(spec, cfg["count"], cfg["seed"], cfg["chains"])
    if cfg["mode"] == "mcmc":
        return sample_mcmc(spec, cfg["count"], cfg["seed"], cfg["step"], cfg["chains"], cfg["burn_in"])
    raise ValidationError("mode must be gaussian or mcmc")


def cmd_sample(cfg: dict) -> int:
    spec = _spec(cfg)
    batch = _draw_samples(cfg, spec)
    header = [f"sv{i + 1}" for i in range(spec.n)]
    _emit(cfg, csv_text(header, batch.values))
    if not batch.tuning_ok:
        sys.stderr.write(f"warning: MCMC acceptance {batch.acceptance.tolist()} outside [0.2, 0.6]\n")
    return 0


def cmd_compare(cfg: dict) -> int:
    from .mcsim import compare_to_kernel

    spec = _spec(cfg)
    batch = _draw_samples(cfg, spec)
    ke = _builder(cfg)(spec)
    rep = compare_to_kernel(batch, ke)
    rep.update(mode=batch.mode, seed=batch.seed, chains=batch.chains)
    if batch.acceptance is not None:
        rep["acceptance"] = batch.acceptance
    _emit(cfg, json_text(rep))
    if cfg["ks_max"] is not None and rep["ks"] > cfg["ks_max"]:
        raise ToleranceError(f"KS distance {rep['ks']:.4f} exceeds {cfg['ks_max']}")
    return 0


def cmd_gap(cfg: dict) -> int:
    from .kernel import GapRequest, gap_probability

    spec = _spec(cfg)
    _require(cfg, "interval")
    a, b = _pair(cfg["interval"])
    req = GapRequest(a, b, cfg["m"])
    ke = _builder(cfg)(spec)
    e0 = gap_probability(ke, req)
    _emit(cfg, json_text({"spec": spec.to_dict(), "a": a, "b": b, "m": req.m, "E0": e0}))
    return 0


HANDLERS = {
    "biortho": cmd_biortho, "kernel": cmd_kernel, "scaling": cmd_scaling,
    "ode-check": cmd_ode_check, "density": cmd_density, "phase": cmd_phase,
    "phase-map": cmd_phase_map, "gamma": cmd_gamma, "triple": cmd_triple,
    "sample": cmd_sample, "compare": cmd_compare, "gap": cmd_gap,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv``, run the subcommand and return the exit code."""
    try:
        ns = _parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args = vars(ns)
    command = args.pop("command")
    try:
        cfg = _merge(command, args)
        return HANDLERS[command](cfg)
    except C2MMError as exc:
        sys.stderr.write(f"c2mm {command}: {type(exc).__name__}: {exc}\n")
        return exc.exit_code


def main(argv: Optional[Sequence[str]] = None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":  # pragma: no cover
    main()
