"""
Command-line front end.

    cbvar estimate     fit one model (alpha = N | inf | bic)
    cbvar select-alpha evaluate the alpha grid and report the knee choice
    cbvar backtest     recursive out-of-sample forecasts with MAE / LPL
    cbvar irf          recursive-identification impulse responses per alpha
    cbvar simstudy     Monte Carlo IRF study over nine DGPs
    cbvar replay       re-run a manifest written by any of the above

Every run writes ``manifest.json`` into its output directory. Exit codes:
0 ok, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from cbvar import __version__
from cbvar.core import NumericalError, build_design, fit_complexity, learning_rate
from cbvar.dataio import MODEL_SIZES, DataError, Dataset, load_csv, read_transform_config, recursive_windows
from cbvar.montecarlo import DEFAULT_DRAWS, fmt, forecast, gaussian_lpl, irf, sample_posterior
from cbvar.selection import (
    DEFAULT_ALPHA_GRID,
    evaluate_alpha_grid,
    fit_cbvar,
    format_alpha,
    parse_alpha,
    select_alpha_knee,
)
from cbvar.simstudy import STUDY_ALPHA_GRID, StudyConfig, run_study

logger = logging.getLogger("cbvar")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
FOCUS_DEFAULT = ("UNRATE", "CPIAUCSL", "FEDFUNDS")
RUN_KEYS = (
    "command", "data", "size", "lags", "alpha", "lam", "horizons", "draws", "seed",
    "window", "eval_start", "eval_cut", "focus", "transforms", "prepend", "shock",
    "irf_horizon", "replications", "t_sim", "benchmark",
)


class ConfigError(ValueError):
    pass


def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# ----------------------------------------------------------------- helpers


def _variables(size: str):
    if size in MODEL_SIZES:
        return MODEL_SIZES[size].variables
    if size.startswith("custom:"):
        text = Path(size[len("custom:"):]).read_text()
        names = [n.strip() for n in text.replace(",", "\n").splitlines() if n.strip()]
        if not names:
            raise ConfigError(f"no variables listed in {size}")
        return tuple(names)
    if size == "all":
        return None
    raise ConfigError(f"unknown model size {size!r}")


def _window(text):
    if not text:
        return None
    if ":" not in text:
        raise ConfigError(f"window must be START:END, got {text!r}")
    start, end = text.split(":", 1)
    return (start or None, end or None)


def load_dataset(cfg) -> Dataset:
    transforms = read_transform_config(cfg["transforms"]) if cfg.get("transforms") else None
    names = _variables(cfg["size"])
    window = _window(cfg.get("window"))
    data = load_csv(cfg["data"], names, window, transforms)
    if cfg.get("prepend"):
        extra = load_csv(cfg["data"], [cfg["prepend"]], (str(data.dates[0]), str(data.dates[-1])),
                         {cfg["prepend"]: "level"})
        data = data.prepend(extra)
    return data


def _alpha_list(text):
    return [parse_alpha(t) for t in str(text).split(",") if t.strip()]


def _lam(text):
    if str(text).lower() == "auto":
        return "auto"
    v = float(text)
    if not v > 0:
        raise ConfigError("lambda must be positive")
    return v


def _shock_index(shock, names):
    if shock is None:
        return 0
    try:
        return int(shock)
    except ValueError:
        if shock not in names:
            raise ConfigError(f"shock variable {shock!r} not in model")
        return names.index(shock)


def _write_rows(path, header_comment, headers, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(headers)
        for r in rows:
            w.writerow(r)


def _read_rows(path):
    with open(path) as fh:
        lines = [l for l in fh if not l.startswith("#")]
    return list(csv.DictReader(lines))


def write_manifest(cfg, out: Path, outputs):
    manifest = {
        "cbvar_version": __version__,
        "config": {k: cfg.get(k) for k in RUN_KEYS if cfg.get(k) is not None},
        "inputs": {},
        "outputs": {name: sha256_of(out / name) for name in sorted(outputs)},
    }
    if cfg.get("data"):
        manifest["inputs"]["data_sha256"] = sha256_of(cfg["data"])
    if cfg.get("transforms"):
        manifest["inputs"]["transforms_sha256"] = sha256_of(cfg["transforms"])
    if cfg.get("benchmark"):
        bdir = Path(cfg["benchmark"]).parent
        manifest["inputs"]["benchmark_outputs"] = {
            n: sha256_of(bdir / n) for n in ("mae.csv", "lpl.csv") if (bdir / n).exists()
        }
    if cfg.get("_flags"):
        manifest["data_flags"] = cfg["_flags"]
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------- commands


def _fit(cfg, data):
    design = build_design(data, cfg["lags"])
    alpha = parse_alpha(cfg["alpha"])
    return design, fit_cbvar(design, alpha, lam=_lam(cfg["lam"]))


def _curve_rows(grid):
    for pt in grid.points:
        yield [format_alpha(pt.alpha), fmt(pt.mf), pt.mc, fmt(grid.lambdas[pt.alpha])]


def cmd_estimate(cfg, out: Path):
    data = load_dataset(cfg)
    cfg["_flags"] = data.provenance.get("flags", [])
    design, f = _fit(cfg, data)
    post = f.posterior
    if f.grid is not None:
        rows = list(_curve_rows(f.grid))
    else:
        pt = fit_complexity(design, post, learning_rate(f.alpha, design.T_effective))
        rows = [[format_alpha(f.alpha), fmt(pt.mf), pt.mc, fmt(f.lam)]]
    _write_rows(out / "alpha_curve.csv", "benchmark: none (fit/complexity curve)",
                ["alpha", "mf", "mc", "lambda"], rows)
    payload = {
        "alpha": format_alpha(f.alpha),
        "lambda": f.lam,
        "zeta": post.zeta,
        "df": post.df,
        "lags": design.p,
        "var_names": list(design.var_names),
        "sample": [str(data.dates[0]), str(data.dates[-1])],
        "T_effective": design.T_effective,
        "A_bar": post.A_bar.tolist(),
        "V_bar": post.V_bar.tolist(),
        "S_bar": post.S_bar.tolist(),
        "jittered": post.jittered,
    }
    with open(out / "posterior.json", "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")
    print(f"alpha* = {format_alpha(f.alpha)}  lambda* = {f.lam:g}")
    return ["posterior.json", "alpha_curve.csv"]


def cmd_select_alpha(cfg, out: Path):
    data = load_dataset(cfg)
    cfg["_flags"] = data.provenance.get("flags", [])
    design = build_design(data, cfg["lags"])
    grid = evaluate_alpha_grid(design, alpha_grid=DEFAULT_ALPHA_GRID, lam=_lam(cfg["lam"]))
    a_star = select_alpha_knee(grid)
    _write_rows(out / "alpha_curve.csv", f"benchmark: none; selected alpha={format_alpha(a_star)}",
                ["alpha", "mf", "mc", "lambda"], _curve_rows(grid))
    print(f"alpha* = {format_alpha(a_star)}")
    return ["alpha_curve.csv"]


def _origin_job(args):
    split, cfg, seed, focus_idx = args
    design = build_design(split.train, cfg["lags"])
    f = fit_cbvar(design, parse_alpha(cfg["alpha"]), lam=_lam(cfg["lam"]))
    s1, s2 = np.random.SeedSequence(seed).generate_state(2)
    draws = sample_posterior(f.posterior, cfg["draws"], int(s1))
    horizons = tuple(cfg["horizons"])
    fc = forecast(draws, split.train.values, horizons, int(s2), split.train.names)
    rows = []
    for i, h in enumerate(horizons):
        for j in focus_idx:
            real = split.realized[h - 1, j]
            if not np.isfinite(real):
                continue
            lpl = gaussian_lpl(fc.draws[h][:, j], real)
            rows.append((str(split.origin), str(split.target_dates[h - 1]), h,
                         split.train.names[j], fc.point[i, j], real, abs(fc.point[i, j] - real), lpl))
    return rows, f.alpha, f.lam


def _summaries(rows, cut=None):
    acc = {}
    for r in rows:
        if cut is not None and np.datetime64(r["target"], "M") > np.datetime64(cut, "M"):
            continue
        key = (r["horizon"], r["variable"])
        acc.setdefault(key, []).append(r)
    return acc


def cmd_backtest(cfg, out: Path):
    data = load_dataset(cfg)
    cfg["_flags"] = data.provenance.get("flags", [])
    if not cfg.get("eval_start"):
        raise ConfigError("backtest needs --eval-start (first forecast target month)")
    first_end = np.datetime64(cfg["eval_start"], "M") - 1
    focus = cfg.get("focus") or [n for n in FOCUS_DEFAULT if n in data.names] or list(data.names)
    missing = [n for n in focus if n not in data.names]
    if missing:
        raise ConfigError(f"focus variables not in model: {missing}")
    focus_idx = [data.names.index(n) for n in focus]
    H = max(cfg["horizons"])
    splits = list(recursive_windows(data, str(first_end), max_h=H))
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(cfg["seed"]).spawn(len(splits))]
    jobs = [(sp, cfg, seeds[i], focus_idx) for i, sp in enumerate(splits)]
    workers = int(cfg.get("workers") or 1)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_origin_job, jobs))
    else:
        results = [_origin_job(j) for j in jobs]

    rows = [dict(origin=r[0], target=r[1], horizon=r[2], variable=r[3], point=r[4],
                 realized=r[5], abs_error=r[6], lpl=r[7])
            for res in results for r in res[0]]
    bench = None
    bdesc = "none"
    if cfg.get("benchmark"):
        bdir = Path(cfg["benchmark"]).parent
        bmae = _read_rows(bdir / "mae.csv")
        blpl = _read_rows(bdir / "lpl.csv")
        bench = {}
        for a, b in zip(bmae, blpl):
            bench[(a["origin"], int(a["horizon"]), a["variable"])] = (float(a["abs_error"]), float(b["lpl"]))
        mine = {(r["origin"], r["horizon"], r["variable"]) for r in rows}
        if mine != set(bench):
            raise ConfigError("benchmark run has different origins/horizons/variables")
        bdesc = f"run in {bdir} (sha256 mae.csv {sha256_of(bdir / 'mae.csv')[:16]})"
        for r in rows:
            r["bench_abs_error"], r["bench_lpl"] = bench[(r["origin"], r["horizon"], r["variable"])]

    def bcols(r, which):
        if bench is None:
            return []
        if which == "mae":
            return [fmt(r["bench_abs_error"])]
        return [fmt(r["bench_lpl"]), fmt(r["lpl"] - r["bench_lpl"])]

    _write_rows(out / "mae.csv", f"absolute errors of the predictive median; benchmark: {bdesc}",
                ["origin", "target", "horizon", "variable", "point", "realized", "abs_error"]
                + (["bench_abs_error"] if bench else []),
                ([r["origin"], r["target"], r["horizon"], r["variable"], fmt(r["point"]),
                  fmt(r["realized"]), fmt(r["abs_error"])] + bcols(r, "mae") for r in rows))
    _write_rows(out / "lpl.csv", f"Gaussian-approximation log predictive likelihood; benchmark: {bdesc}",
                ["origin", "target", "horizon", "variable", "lpl"]
                + (["bench_lpl", "lpl_diff"] if bench else []),
                ([r["origin"], r["target"], r["horizon"], r["variable"], fmt(r["lpl"])] + bcols(r, "lpl")
                 for r in rows))

    cum_rows = []
    for name in focus:
        c = cb = 0.0
        for r in rows:
            if r["horizon"] != 1 or r["variable"] != name:
                continue
            c += r["lpl"]
            cb += r["bench_lpl"] if bench else 0.0
            cum_rows.append([r["origin"], r["target"], name, fmt(c)] + ([fmt(c - cb)] if bench else []))
    _write_rows(out / "lpl_cumulative.csv", f"cumulative one-step LPL; benchmark: {bdesc}",
                ["origin", "target", "variable", "cum_lpl"] + (["cum_lpl_diff"] if bench else []),
                cum_rows)

    outputs = ["mae.csv", "lpl.csv", "lpl_cumulative.csv"]
    tables = [("summary.csv", None)]
    if cfg.get("eval_cut"):
        tables.append(("summary_cut.csv", cfg["eval_cut"]))
    for fname, cut in tables:
        acc = _summaries(rows, cut)
        srows = []
        for (h, v), rs in sorted(acc.items(), key=lambda kv: (kv[0][0], focus.index(kv[0][1]))):
            mae = float(np.mean([r["abs_error"] for r in rs]))
            lpl = float(np.mean([r["lpl"] for r in rs]))
            row = [h, v, len(rs), fmt(mae), fmt(lpl)]
            if bench:
                bmae = float(np.mean([r["bench_abs_error"] for r in rs]))
                blpl = float(np.mean([r["bench_lpl"] for r in rs]))
                row += [fmt(mae / bmae) if bmae > 0 else "nan", fmt(lpl - blpl)]
            srows.append(row)
        label = f"targets through {cut}" if cut else "all targets"
        _write_rows(out / fname,
                    f"{label}; MAE ratio = mean MAE / benchmark mean MAE, LPL diff = mean LPL - benchmark mean LPL; benchmark: {bdesc}",
                    ["horizon", "variable", "n", "mae", "lpl"] + (["mae_ratio", "lpl_diff"] if bench else []),
                    srows)
        outputs.append(fname)

    _write_rows(out / "origins.csv", "benchmark: none (per-origin selected hyperparameters)",
                ["origin", "alpha", "lambda"],
                ([str(sp.origin), format_alpha(res[1]), fmt(res[2])] for sp, res in zip(splits, results)))
    outputs.append("origins.csv")
    print(f"{len(splits)} origins, {len(rows)} scored forecasts")
    return outputs


def cmd_irf(cfg, out: Path):
    data = load_dataset(cfg)
    cfg["_flags"] = data.provenance.get("flags", [])
    design = build_design(data, cfg["lags"])
    shock = _shock_index(cfg.get("shock"), list(design.var_names))
    if not 0 <= shock < design.M:
        raise ConfigError(f"shock index {shock} out of range")
    rows = []
    for a in _alpha_list(cfg["alpha"]):
        f = fit_cbvar(design, a, lam=_lam(cfg["lam"]))
        draws = sample_posterior(f.posterior, cfg["draws"], cfg["seed"])
        res = irf(draws, shock, cfg["irf_horizon"], var_names=design.var_names)
        label = format_alpha(a) if a != "bic" else f"bic={format_alpha(f.alpha)}"
        for h, v, s, x in res.rows():
            rows.append([label, h, v, s, x])
    _write_rows(out / "irf_quantiles.csv",
                f"benchmark: none; shock={design.var_names[shock]} (position {shock}), lower-Cholesky impact",
                ["alpha", "horizon", "variable", "statistic", "value"], rows)
    return ["irf_quantiles.csv"]


def cmd_simstudy(cfg, out: Path):
    res = run_study(config=StudyConfig(
        alpha_grid=STUDY_ALPHA_GRID,
        replications=cfg["replications"],
        n_draws=cfg["draws"],
        T_sim=cfg["t_sim"],
        seed=cfg["seed"],
        workers=int(cfg.get("workers") or 1),
    ))
    res.write_table(out / "table1.csv")
    res.write_raw(out / "table1_raw.csv")
    for (m, s), row in res.table.items():
        print(f"{m:4s} {s:6s} " + " ".join(f"{row[c]:5.2f}" for c in res.columns))
    return ["table1.csv", "table1_raw.csv"]


COMMANDS = {
    "estimate": cmd_estimate,
    "select-alpha": cmd_select_alpha,
    "backtest": cmd_backtest,
    "irf": cmd_irf,
    "simstudy": cmd_simstudy,
}


# ------------------------------------------------------------------ parser


def _int_list(text):
    return [int(t) for t in str(text).split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cbvar", description="Coarsened Bayesian VARs")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        if data:
            p.add_argument("--data", required=True)
            p.add_argument("--size", default="small",
                           help="small | medium | large | all | custom:FILE")
            p.add_argument("--lags", type=int, default=13)
            p.add_argument("--window", help="sample START:END (YYYY-MM)")
            p.add_argument("--transforms", help="INI file mapping name = transform")
            p.add_argument("--prepend", help="extra column placed first, in levels")
            p.add_argument("--lambda", dest="lam", default="auto")
        p.add_argument("--draws", type=int, default=DEFAULT_DRAWS)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True)
        p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("estimate")
    common(p)
    p.add_argument("--alpha", default="inf")
    p = sub.add_parser("select-alpha")
    common(p)
    p = sub.add_parser("backtest")
    common(p)
    p.add_argument("--alpha", default="inf")
    p.add_argument("--horizons", type=_int_list, default=[1, 3, 12])
    p.add_argument("--eval-start", help="first forecast target month, e.g. 2001-07")
    p.add_argument("--eval-cut", help="extra summary for targets through this month")
    p.add_argument("--focus", type=lambda s: [t for t in s.split(",") if t])
    p.add_argument("--benchmark", help="manifest.json of a previous backtest")
    p = sub.add_parser("irf")
    common(p)
    p.add_argument("--alpha", default="inf", help="comma-separated list of N | inf | bic")
    p.add_argument("--shock", help="shock position or variable name (default 0)")
    p.add_argument("--irf-horizon", type=int, default=60)
    p = sub.add_parser("simstudy")
    common(p, data=False)
    p.set_defaults(draws=1000)
    p.add_argument("--replications", type=int, default=20)
    p.add_argument("--t-sim", type=int, default=480)
    p = sub.add_parser("replay")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    return parser


def run(cfg: dict) -> int:
    out = Path(cfg["out"])
    try:
        if cfg["command"] not in COMMANDS:
            raise ConfigError(f"unknown command {cfg['command']}")
        if "alpha" in cfg and cfg["alpha"] is not None:
            _alpha_list(cfg["alpha"])
        if "lam" in cfg and cfg["lam"] is not None:
            _lam(cfg["lam"])
        if cfg.get("draws", 1) < 1:
            raise ConfigError("--draws must be >= 1")
        out.mkdir(parents=True, exist_ok=True)
        outputs = COMMANDS[cfg["command"]](cfg, out)
        write_manifest(cfg, out, outputs)
    except (ConfigError, FileNotFoundError) as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(json.dumps({"error": "data", "message": str(exc)}), file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(json.dumps({"error": "numeric", "message": str(exc)}), file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "replay":
        try:
            manifest = json.loads(Path(args.manifest).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
            return EXIT_CONFIG
        cfg = dict(manifest["config"])
        want = manifest.get("inputs", {}).get("data_sha256")
        if want and cfg.get("data"):
            try:
                have = sha256_of(cfg["data"])
            except OSError as exc:
                print(json.dumps({"error": "data", "message": str(exc)}), file=sys.stderr)
                return EXIT_DATA
            if have != want:
                print(json.dumps({"error": "data", "message": f"{cfg['data']} changed since the "
                                  "manifest was written (sha256 mismatch)"}), file=sys.stderr)
                return EXIT_DATA
        cfg["out"] = args.out
        cfg["workers"] = args.workers
        return run(cfg)
    cfg = {k: v for k, v in vars(args).items() if k != "verbose"}
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
