"""Command-line front end.

Every subcommand takes its parameters from flags, optionally layered over a
JSON file given with ``--config`` (flags win). A manifest written by an
earlier run can be passed as the config file to reproduce that run.

Exit codes: 0 success, 2 usage, 3 ingestion, 4 numerical, 5 configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import dpfmix
from dpfmix import accountant, learner, regression
from dpfmix.errors import (AccuracyError, ConfigError, DomainError, DPFMixError,
                           IngestionError)
from dpfmix.io import load_dataset
from dpfmix.release import ReleaseConfig, manifest_path, release, store_released
from dpfmix.tradeoff import epsdelta_to_mu, mu_to_epsdelta

log = logging.getLogger("dpfmix")

EXIT_OK, EXIT_USAGE, EXIT_INGESTION, EXIT_NUMERICAL, EXIT_CONFIG = 0, 2, 3, 4, 5


class UsageError(DPFMixError):
    pass


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, IngestionError):
        return EXIT_INGESTION
    if isinstance(exc, AccuracyError):
        return EXIT_NUMERICAL
    if isinstance(exc, (ConfigError, DomainError)):
        return EXIT_CONFIG
    return EXIT_NUMERICAL


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of integers: {text!r}") from None


# name -> default; None means "required unless stated otherwise"
DEFAULTS = {
    "calibrate": {"n": None, "m": None, "T": None, "mu": None, "eps": None, "delta": None,
                  "C_x": 1.0, "C_y": 1.0, "lam": 1.0, "eps_table": [0.5, 1.0, 2.0, 4.0, 8.0],
                  "output": None},
    "release": {"input": None, "output": None, "m": None, "T": None, "mu": None, "eps": None,
                "delta": 1e-5, "C_x": 1.0, "C_y": 1.0, "lam": 1.0, "seed": 0,
                "features_from": None, "format": None, "force": False, "no_noise": False},
    "sweep": {"gamma": None, "n_list": None, "mu": 2.0, "repeats": 20, "seed": 0, "p": 100,
              "C_x": 14.0, "C_y": 36.0, "lam": 1.0, "grid": "pow2", "m_grid": None,
              "out_dir": None, "no_fit": False},
    "accountant-compare": {"n": 50000, "T": 50000, "eps": 1.0, "delta": 1e-5,
                           "m_list": [2 ** k for k in range(15)], "output": None},
    "clt-convergence": {"T_list": [10, 50, 200], "mu": 0.5016, "sigma": 0.8441,
                        "grid_size": 100_001, "output": None},
    "train-eval": {"release": None, "train_clean": None, "test_clean": None, "epochs": 200,
                   "batch_size": 256, "lr": 1e-3, "seed": 0, "output": None, "model_out": None},
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpfmix", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=dpfmix.__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help):
        p = sub.add_parser(name, help=help, argument_default=None)
        p.add_argument("--config", help="JSON file of parameters (or a manifest)")
        return p

    p = command("calibrate", "noise scales and (eps, delta) profile for a budget")
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--mu", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--Cx", dest="C_x", type=float)
    p.add_argument("--Cy", dest="C_y", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--eps-table", type=lambda s: [float(v) for v in s.split(",")])
    p.add_argument("--output", help="also write the JSON report here")

    p = command("release", "release a private mixup dataset")
    p.add_argument("--input")
    p.add_argument("--output")
    p.add_argument("--m", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--mu", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--Cx", dest="C_x", type=float)
    p.add_argument("--Cy", dest="C_y", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--features-from")
    p.add_argument("--format", choices=("csv", "binary"))
    p.add_argument("--force", action="store_true", default=None)
    p.add_argument("--no-noise", action="store_true", default=None,
                   help="skip the Gaussian perturbation (not private; for baselines)")

    p = command("sweep", "locate the optimal mixup degree and fit its scaling")
    p.add_argument("--gamma", type=float)
    p.add_argument("--n-list", type=_int_list)
    p.add_argument("--mu", type=float)
    p.add_argument("--repeats", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--Cx", dest="C_x", type=float)
    p.add_argument("--Cy", dest="C_y", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--grid", choices=("pow2", "fine"))
    p.add_argument("--m-grid", type=_int_list, help="explicit grid, overrides --grid")
    p.add_argument("--out-dir")
    p.add_argument("--no-fit", action="store_true", default=None,
                   help="only write the per-n curves, skip the slope fit")

    p = command("accountant-compare", "GDP vs RDP noise for a range of m")
    p.add_argument("--n", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--m-list", type=_int_list)
    p.add_argument("--output")

    p = command("clt-convergence", "distance of the exact composition to its GDP limit")
    p.add_argument("--T-list", type=_int_list)
    p.add_argument("--mu", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--grid-size", type=int)
    p.add_argument("--output")

    p = command("train-eval", "train on a release, report accuracy and leakage")
    p.add_argument("--release")
    p.add_argument("--train-clean")
    p.add_argument("--test-clean")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--output")
    p.add_argument("--model-out")
    return parser


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg = dict(DEFAULTS[command])
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise IngestionError(f"{args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise IngestionError(f"{args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
        if isinstance(loaded.get("config"), dict):
            loaded = loaded["config"]
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise ConfigError(f"unknown {command} config keys: {', '.join(unknown)}")
        cfg.update(loaded)
    for key in cfg:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise UsageError("missing required parameter(s): " +
                         ", ".join("--" + k.replace("_", "-") for k in missing))


def _budget_mu(cfg: dict, *, delta_has_default: bool = False) -> float:
    """The budget as mu; exactly one of mu or eps (with delta) must be set."""
    has_mu, has_eps = cfg.get("mu") is not None, cfg.get("eps") is not None
    has_delta = cfg.get("delta") is not None
    if has_mu == has_eps or (has_mu and has_delta and not delta_has_default):
        raise UsageError("give exactly one budget: --mu, or --eps with --delta")
    if has_eps and not has_delta:
        raise UsageError("--eps needs --delta")
    if has_mu:
        mu = float(cfg["mu"])
        if not (mu > 0 and math.isfinite(mu)):
            raise ConfigError(f"non-positive budget: mu={mu}")
        return mu
    if not cfg["eps"] > 0 or not 0 < cfg["delta"] < 1:
        raise ConfigError(f"non-positive budget: eps={cfg['eps']}, delta={cfg['delta']}")
    return epsdelta_to_mu(cfg["eps"], cfg["delta"])


def _manifest(command: str, cfg: dict, **extra) -> dict:
    out = {"command": command, "version": dpfmix.__version__, "seed": cfg.get("seed"),
           "config": cfg}
    out.update(extra)
    return out


def _write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_calibrate(cfg: dict) -> dict:
    _require(cfg, "n", "m", "T")
    mu = _budget_mu(cfg)
    scales = accountant.calibrate_noise(cfg["n"], cfg["m"], cfg["T"], mu, cfg["C_x"],
                                        cfg["C_y"], cfg["lam"])
    report = _manifest("calibrate", cfg, mu=mu, sigma_x=scales.sigma_x, sigma_y=scales.sigma_y,
                       sigma_x_eff=scales.sigma_x_eff, sigma_y_eff=scales.sigma_y_eff,
                       sigma=scales.sigma, epsdelta=[mu_to_epsdelta(mu, e)._asdict()
                                                     for e in cfg["eps_table"]])
    print(json.dumps(report, indent=2, sort_keys=True))
    if cfg["output"]:
        _write_json(cfg["output"], report)
    return report


def _refuse_overwrite(paths, force: bool) -> None:
    if force:
        return
    existing = [str(p) for p in paths if Path(p).exists()]
    if existing:
        raise UsageError(f"refusing to overwrite {', '.join(existing)} (use --force)")


def cmd_release(cfg: dict) -> dict:
    _require(cfg, "input", "output", "m", "T")
    _budget_mu(cfg, delta_has_default=True)
    _refuse_overwrite([cfg["output"], manifest_path(cfg["output"])], cfg["force"])
    data = load_dataset(cfg["input"])
    rc = ReleaseConfig(m=cfg["m"], T=cfg["T"], C_x=cfg["C_x"], C_y=cfg["C_y"], lam=cfg["lam"],
                       mu=cfg["mu"], eps=cfg["eps"], delta=cfg["delta"], seed=cfg["seed"],
                       features_from=cfg["features_from"])
    rel = release(data, rc, add_noise=not cfg["no_noise"])
    rel.manifest.update(command="release", config=cfg)
    store_released(rel, cfg["output"], cfg["format"])
    log.info("released %d records to %s", rc.T, cfg["output"])
    return rel.manifest


def _sweep_grid(cfg: dict, n: int) -> list[int]:
    if cfg["m_grid"]:
        return [m for m in cfg["m_grid"] if m < n]
    if cfg["grid"] == "fine":
        return regression.fine_grid(n, cfg["gamma"])
    if cfg["grid"] == "pow2":
        return regression.power_of_two_grid(n)
    raise ConfigError(f"unknown grid {cfg['grid']!r}")


def cmd_sweep(cfg: dict) -> dict:
    _require(cfg, "gamma", "n_list", "out_dir")
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    points, summary = [], {}
    for n in cfg["n_list"]:
        res = regression.sweep_m(n, cfg["gamma"], cfg["mu"], cfg["repeats"], _sweep_grid(cfg, n),
                                 cfg["seed"], cfg["p"], cfg["C_x"], cfg["C_y"], cfg["lam"])
        accountant.write_rows_csv(out / f"sweep_n{n}.csv", ("m", "mean_err", "std_err"),
                                  res.rows())
        points.append((math.log2(n), math.log2(res.m_star)))
        summary[str(n)] = {"m_star": res.m_star, "T": res.T, "excluded": list(res.excluded)}
        log.info("n=%d T=%d m*=%d", n, res.T, res.m_star)
    accountant.write_rows_csv(out / "slope_points.csv", ("log2n", "log2mstar", "gamma"),
                              [(x, y, float(cfg["gamma"])) for x, y in points])
    if cfg["no_fit"]:
        report = _manifest("sweep", cfg, sweeps=summary)
        _write_json(out / "sweep.json", report)
        print(json.dumps({n: s["m_star"] for n, s in summary.items()}))
        return report
    fit = regression.fit_slope(points)
    report = _manifest("sweep", cfg, sweeps=summary, slope=fit.slope, intercept=fit.intercept,
                       r2=fit.r2, target_slope=(2 - cfg["gamma"]) / 2)
    _write_json(out / "slope.json", report)
    print(json.dumps({k: report[k] for k in ("slope", "intercept", "r2", "target_slope")}))
    return report


def cmd_accountant_compare(cfg: dict) -> dict:
    _require(cfg, "output")
    if not cfg["m_list"]:
        raise UsageError("--m-list is empty")
    rows = accountant.noise_vs_m_table(cfg["n"], cfg["T"], cfg["eps"], cfg["delta"],
                                       cfg["m_list"])
    accountant.write_rows_csv(cfg["output"], ("m", "gdp_noise", "rdp_noise"), rows)
    report = _manifest("accountant-compare", cfg)
    _write_json(manifest_path(cfg["output"]), report)
    return report


def cmd_clt_convergence(cfg: dict) -> dict:
    _require(cfg, "output")
    if not cfg["T_list"]:
        raise UsageError("--T-list is empty")
    rows = accountant.clt_convergence_table(cfg["T_list"], cfg["mu"], cfg["sigma"],
                                            cfg["grid_size"])
    accountant.write_rows_csv(cfg["output"], ("T", "linf_err", "l2_err"), rows)
    report = _manifest("clt-convergence", cfg)
    _write_json(manifest_path(cfg["output"]), report)
    return report


def cmd_train_eval(cfg: dict) -> dict:
    _require(cfg, "release", "train_clean", "test_clean", "output")
    rel = load_dataset(cfg["release"])
    train_clean = load_dataset(cfg["train_clean"])
    test_clean = load_dataset(cfg["test_clean"])
    tc = learner.TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr=cfg["lr"],
                             seed=cfg["seed"])
    model = learner.train(rel.features, learner.clip_labels(rel.labels), tc)
    report = learner.membership_report(model, train_clean.features, train_clean.hard_labels(),
                                       test_clean.features, test_clean.hard_labels())
    metrics = {"accuracy": report.nonmember_accuracy, "gap": report.gap, "auc": report.auc}
    _write_json(cfg["output"], metrics)
    _write_json(manifest_path(cfg["output"]), _manifest("train-eval", cfg, metrics=metrics))
    if cfg["model_out"]:
        learner.save_model(model, cfg["model_out"], tc)
    print(json.dumps(metrics))
    return metrics


COMMANDS = {
    "calibrate": cmd_calibrate,
    "release": cmd_release,
    "sweep": cmd_sweep,
    "accountant-compare": cmd_accountant_compare,
    "clt-convergence": cmd_clt_convergence,
    "train-eval": cmd_train_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.command, args)
        COMMANDS[args.command](cfg)
    except DPFMixError as exc:
        print(f"dpfmix {args.command}: error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except (TypeError, KeyError) as exc:
        # malformed values from a config file
        print(f"dpfmix {args.command}: error: bad configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
