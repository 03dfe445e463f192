"""Command-line front end.

Subcommands cover the full pipeline: generate a truth object, simulate noisy
frames, compute precision bounds, estimate reconstructions, evaluate them
against truth and bounds, and reproduce the whole chain from one config.

Configuration is plain key=value text (UTF-8, '#' comments, blank lines
ignored); unknown keys are rejected. Precedence is defaults < config file <
--set overrides < dedicated flags (--seed, --threads). Every command writes
the fully resolved configuration next to its outputs as <command>.config so
a run can be repeated exactly. Existing output files are never overwritten
unless --force is given.

Exit codes: 0 success, 1 execution failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import bounds as bounds_mod
from . import evaluation
from .errors import UsageError
from .estimators import (
    MlConfig,
    load_external_reconstructions,
    run_ensemble,
    write_reconstructions,
)
from .families import (
    Family,
    ParamVector,
    analytic_jacobian,
    default_bounds,
    sample_params,
    theta_from_json,
    theta_to_json,
    transmittance,
)
from .grid import GridSpec, make_grid
from .imgx import read_imgx, write_imgx
from .probe import Convention, ProbeConfig, expected_counts, sample_ensemble


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def _parse_theta_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(","))
    except ValueError as exc:
        raise UsageError(f"theta must be comma-separated numbers: {exc}") from None


def _parse_int(text: str) -> int:
    try:
        return int(text, 10)
    except ValueError:
        raise UsageError(f"expected an integer, got {text!r}") from None


def _parse_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise UsageError(f"expected a number, got {text!r}") from None
    if not np.isfinite(value):
        raise UsageError(f"expected a finite number, got {text!r}")
    return value


# key -> (parser, default); None default means "unset"
_SCHEMA = {
    "family": (str, None),
    "side": (_parse_int, 64),
    "n_bar": (_parse_float, 4096.0),
    "convention": (str, "amplitude-squared"),
    "frames": (_parse_int, 100),
    "estimator": (str, "plugin"),
    "theta": (_parse_theta_list, None),
    "seed": (_parse_int, None),
    "mc_samples": (_parse_int, 20000),
    "multistart": (_parse_int, 8),
    "max_iter": (_parse_int, 200),
    "threads": (_parse_int, 1),
}


class RunConfig:
    """Resolved key=value configuration with explicit-key tracking."""

    def __init__(self):
        self.values = {key: default for key, (_, default) in _SCHEMA.items()}
        self.explicit: set[str] = set()

    def set(self, key: str, raw: str) -> None:
        if key not in _SCHEMA:
            raise UsageError(f"unknown config key {key!r}")
        parser, _ = _SCHEMA[key]
        self.values[key] = parser(raw.strip())
        self.explicit.add(key)

    def __getitem__(self, key: str):
        return self.values[key]

    def require(self, key: str):
        value = self.values[key]
        if value is None:
            raise UsageError(f"config key {key!r} is required for this command")
        return value

    def lines(self) -> list[str]:
        out = []
        for key in _SCHEMA:
            value = self.values[key]
            if value is None:
                continue
            if key == "theta":
                out.append(f"theta={','.join(f'{v:.17g}' for v in value)}")
            elif isinstance(value, float):
                out.append(f"{key}={value:.17g}")
            else:
                out.append(f"{key}={value}")
        return out


def parse_config_text(text: str, into: RunConfig | None = None) -> RunConfig:
    cfg = into or RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        cfg.set(key.strip(), value)
    return cfg


def load_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        parse_config_text(path.read_text(encoding="utf-8"), into=cfg)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), value)
    if getattr(args, "seed", None) is not None:
        cfg.set("seed", str(args.seed))
    if getattr(args, "threads", None) is not None:
        cfg.set("threads", str(args.threads))
    return cfg


def _resolve_seed(cfg: RunConfig) -> int:
    """Seed from config, or a fresh one (echoed) when randomness is needed."""
    if cfg["seed"] is not None:
        return cfg["seed"]
    seed = int.from_bytes(os.urandom(8), "little") >> 1
    cfg.set("seed", str(seed))
    print(f"seed = {seed} (auto)")
    return seed


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _claim_outputs(out: Path, names: list[str], force: bool) -> dict[str, Path]:
    paths = {name: out / name for name in names}
    if not force:
        existing = [str(p) for p in paths.values() if p.exists()]
        if existing:
            raise FileExistsError(
                "refusing to overwrite existing outputs (use --force): "
                + ", ".join(existing)
            )
    return paths


def _write_resolved(cfg: RunConfig, out: Path, command: str, force: bool) -> None:
    path = out / f"{command}.config"
    if path.exists() and not force:
        raise FileExistsError(f"refusing to overwrite {path} (use --force)")
    path.write_text("\n".join(cfg.lines()) + "\n", encoding="utf-8")


def _probe_from_config(cfg: RunConfig, grid: GridSpec) -> ProbeConfig:
    return ProbeConfig(
        grid=grid,
        n_bar=cfg["n_bar"],
        convention=Convention.from_name(cfg["convention"]),
    )


def _theta_from_file(path: str) -> ParamVector:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"parameter file not found: {p}")
    return theta_from_json(p.read_text(encoding="utf-8"))


def _grid_from_header(header: dict, cfg: RunConfig) -> GridSpec:
    if header["height"] != header["width"]:
        raise UsageError(
            f"input is {header['height']}x{header['width']}; expected a square grid"
        )
    side = header["height"]
    if "side" in cfg.explicit and cfg["side"] != side:
        raise UsageError(f"config side={cfg['side']} but input frames are {side}x{side}")
    return make_grid(side)


def _json_dump(obj, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = load_config(args)
    out = _out_dir(args)
    family = Family.from_name(cfg.require("family"))
    grid = make_grid(cfg["side"])

    if cfg["theta"] is not None:
        theta = ParamVector(family, np.asarray(cfg["theta"], dtype=np.float64))
    else:
        seed = _resolve_seed(cfg)
        theta = sample_params(family, default_bounds(family, grid), seed)

    paths = _claim_outputs(out, ["truth.imgx", "theta.json"], args.force)
    _write_resolved(cfg, out, "generate", args.force)
    truth = transmittance(theta, grid)
    write_imgx(paths["truth.imgx"], truth.astype(np.float32), "f32le")
    paths["theta.json"].write_text(theta_to_json(theta) + "\n", encoding="utf-8")
    print(f"wrote {paths['truth.imgx']} and {paths['theta.json']}")
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args)
    out = _out_dir(args)
    theta = _theta_from_file(args.params)
    grid = make_grid(cfg["side"])
    probe = _probe_from_config(cfg, grid)
    seed = _resolve_seed(cfg)

    paths = _claim_outputs(out, ["counts.imgx"], args.force)
    _write_resolved(cfg, out, "simulate", args.force)
    lam = expected_counts(transmittance(theta, grid), probe)
    ens = sample_ensemble(lam, cfg["frames"], seed)
    write_imgx(paths["counts.imgx"], ens.counts, "u32le")
    print(f"wrote {paths['counts.imgx']} ({ens.n_frames} frames)")
    return 0


_BOUNDS_FILES = [
    "fim.csv",
    "qcrb_map_jacobian.csv",
    "qcrb_map_mc.csv",
    "sql_counts.csv",
    "hl_counts.csv",
    "sql_transmittance.csv",
    "hl_transmittance.csv",
    "bounds.json",
]


def cmd_bounds(args) -> int:
    cfg = load_config(args)
    out = _out_dir(args)
    theta = _theta_from_file(args.params)
    grid = make_grid(cfg["side"])
    probe = _probe_from_config(cfg, grid)
    seed = _resolve_seed(cfg)

    paths = _claim_outputs(out, _BOUNDS_FILES, args.force)
    _write_resolved(cfg, out, "bounds", args.force)

    T = transmittance(theta, grid)
    jac = analytic_jacobian(theta, grid)
    fim = bounds_mod.qfim(jac, probe)
    cov = bounds_mod.invert_fim(fim)
    vmap_j = bounds_mod.variance_map_jacobian(jac, cov)
    vmap_mc = bounds_mod.variance_map_mc(theta, cov, grid, cfg["mc_samples"], seed)
    lam = expected_counts(T, probe)
    sql_c = bounds_mod.sql_map(lam)
    hl_c = bounds_mod.hl_map(lam)
    sql_t = bounds_mod.rescale_to_transmittance(sql_c, T, probe)
    hl_t = bounds_mod.rescale_to_transmittance(hl_c, T, probe)

    evaluation.write_map_csv(paths["fim.csv"], fim.matrix)
    evaluation.write_map_csv(paths["qcrb_map_jacobian.csv"], vmap_j.values)
    evaluation.write_map_csv(paths["qcrb_map_mc.csv"], vmap_mc.values)
    evaluation.write_map_csv(paths["sql_counts.csv"], sql_c.values)
    evaluation.write_map_csv(paths["hl_counts.csv"], hl_c.values)
    evaluation.write_map_csv(paths["sql_transmittance.csv"], sql_t.values)
    evaluation.write_map_csv(paths["hl_transmittance.csv"], hl_t.values)

    summary = {
        "family": theta.family.value,
        "theta": [float(v) for v in theta.values],
        "side": grid.side,
        "n_bar": probe.n_bar,
        "convention": probe.convention.value,
        "fim_eigenvalues": [float(v) for v in cov.fim_eigenvalues],
        "totals": {
            "qcrb_j": vmap_j.total,
            "qcrb_mc": vmap_mc.total,
            "sql_counts": sql_c.total,
            "hl_counts": hl_c.total,
            "sql_transmittance": sql_t.total,
            "hl_transmittance": hl_t.total,
        },
        "units": {
            "qcrb_j": vmap_j.units,
            "qcrb_mc": vmap_mc.units,
            "sql_counts": sql_c.units,
            "hl_counts": hl_c.units,
            "sql_transmittance": sql_t.units,
            "hl_transmittance": hl_t.units,
        },
        "mc": {"samples": vmap_mc.n_samples, "seed": seed, "jitter": vmap_mc.jitter},
    }
    _json_dump(summary, paths["bounds.json"])
    print(f"wrote bounds for {theta.family.value} to {out}")
    return 0


def cmd_estimate(args) -> int:
    cfg = load_config(args)
    out = _out_dir(args)
    frames, header = read_imgx(args.counts)
    if header["dtype"] != "u32le":
        raise UsageError(f"counts file must be u32le, got {header['dtype']}")
    grid = _grid_from_header(header, cfg)
    probe = _probe_from_config(cfg, grid)
    estimator = cfg["estimator"]
    if estimator not in ("plugin", "ml"):
        raise UsageError(f"estimator must be 'plugin' or 'ml', got {estimator!r}")

    names = ["recon.imgx"] + (["fits.json"] if estimator == "ml" else [])
    ml_cfg = None
    family = None
    if estimator == "ml":
        family = Family.from_name(cfg.require("family"))
        seed = _resolve_seed(cfg)
        ml_cfg = MlConfig(multistart=cfg["multistart"], max_iter=cfg["max_iter"], seed=seed)
    paths = _claim_outputs(out, names, args.force)
    _write_resolved(cfg, out, "estimate", args.force)

    ens = run_ensemble(
        estimator, frames, probe, family=family, config=ml_cfg, processes=cfg["threads"]
    )
    write_reconstructions(ens, paths["recon.imgx"])
    if estimator == "ml":
        fits = {
            "family": family.value,
            "frames": ens.n_frames,
            "failures": [{"frame": i, "reason": reason} for i, reason in ens.failures],
            "fits": [
                {
                    "theta": [float(v) for v in fit.theta.values],
                    "converged": fit.converged,
                    "iterations": fit.iterations,
                    "nll": fit.nll,
                    "grad_max": fit.grad_max,
                    "start_index": fit.start_index,
                }
                for fit in ens.fits
            ],
        }
        _json_dump(fits, paths["fits.json"])
    print(
        f"wrote {paths['recon.imgx']} ({ens.n_frames} frames, estimator={estimator}, "
        f"clip_fraction={ens.clip_fraction:.3g}, failures={len(ens.failures)})"
    )
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args)
    out = _out_dir(args)
    recon = load_external_reconstructions(args.recon)
    truth_frames, t_header = read_imgx(args.truth)
    if t_header["dtype"] != "f32le" or t_header["frames"] != 1:
        raise UsageError("truth file must be a single f32le frame")
    if truth_frames.shape[1:] != recon.images.shape[1:]:
        raise UsageError(
            f"truth is {truth_frames.shape[1:]}, reconstructions are {recon.images.shape[1:]}"
        )
    truth = truth_frames[0].astype(np.float64)

    bounds_path = Path(args.bounds)
    if not bounds_path.is_file():
        raise FileNotFoundError(f"bounds summary not found: {bounds_path}")
    summary = json.loads(bounds_path.read_text(encoding="utf-8"))
    totals_in = summary["totals"]

    names = ["report.json", "mse_map.csv", "bias_sq_map.csv", "variance_map.csv"]
    paths = _claim_outputs(out, names, args.force)
    _write_resolved(cfg, out, "evaluate", args.force)

    mse = evaluation.mse_map(recon, truth)
    bias_sq, variance = evaluation.bias_variance(recon, truth)
    evaluation.write_map_csv(paths["mse_map.csv"], mse)
    evaluation.write_map_csv(paths["bias_sq_map.csv"], bias_sq)
    evaluation.write_map_csv(paths["variance_map.csv"], variance)

    mean_img = recon.images.mean(axis=0)
    report = evaluation.build_report(
        truth_family=summary["family"],
        theta=summary["theta"],
        n_bar=summary["n_bar"],
        convention=summary["convention"],
        estimator=args.estimator_label or recon.estimator,
        frames=recon.n_frames,
        totals={
            "mse": float(mse.sum()),
            "qcrb_j": totals_in["qcrb_j"],
            "qcrb_mc": totals_in["qcrb_mc"],
            "sql": totals_in["sql_counts"],
            "hl": totals_in["hl_counts"],
        },
        maps={name: name for name in names[1:]},
    )
    report["mean_image_metrics"] = {
        "ssim": evaluation.ssim(mean_img, truth) if min(truth.shape) >= 11 else None,
        "gdl": evaluation.gdl(mean_img, truth),
    }
    evaluation.write_report(report, paths["report.json"])
    print(
        f"wrote {paths['report.json']}: total mse {report['totals']['mse']:.6g}, "
        f"mse/qcrb_j {report['ratios']['mse_over_qcrb_j']:.3f}"
    )
    return 0


def cmd_reproduce(args) -> int:
    """Full chain: generate, simulate, bounds, estimate, evaluate in one dir."""
    cfg = load_config(args)
    out = _out_dir(args)
    family = Family.from_name(cfg.require("family"))
    grid = make_grid(cfg["side"])
    probe = _probe_from_config(cfg, grid)
    seed = _resolve_seed(cfg)
    estimator = cfg["estimator"]
    if estimator not in ("plugin", "ml"):
        raise UsageError(f"estimator must be 'plugin' or 'ml', got {estimator!r}")

    names = ["truth.imgx", "theta.json", "counts.imgx", "recon.imgx",
             "report.json", "mse_map.csv", "bias_sq_map.csv", "variance_map.csv"]
    if estimator == "ml":
        names.append("fits.json")
    names += _BOUNDS_FILES
    names += [f"{stage}.config" for stage in
              ("generate", "simulate", "bounds", "estimate", "evaluate")]
    _claim_outputs(out, names, args.force)
    _write_resolved(cfg, out, "reproduce", args.force)

    ns = argparse.Namespace(
        config=None, set=[f"{line}" for line in cfg.lines()], seed=None, threads=None,
        out=str(out), force=True,
    )
    cmd_generate(ns)
    ns_sim = argparse.Namespace(**vars(ns), params=str(out / "theta.json"))
    cmd_simulate(ns_sim)
    cmd_bounds(ns_sim)
    ns_est = argparse.Namespace(**vars(ns), counts=str(out / "counts.imgx"))
    cmd_estimate(ns_est)
    ns_eval = argparse.Namespace(
        **vars(ns),
        recon=str(out / "recon.imgx"),
        truth=str(out / "truth.imgx"),
        bounds=str(out / "bounds.json"),
        estimator_label=estimator,
    )
    cmd_evaluate(ns_eval)
    print(f"reproduced full pipeline for {family.value} in {out} (seed {seed})")
    return 0


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures to exit code 2
        raise UsageError(message)


def _add_common(sub, out_required: bool = True):
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override one config key (repeatable)")
    sub.add_argument("--seed", type=int, help="seed override")
    sub.add_argument("--threads", type=int, help="worker processes for ML fits")
    sub.add_argument("--out", required=out_required, help="output directory")
    sub.add_argument("--force", action="store_true", help="overwrite existing outputs")


def build_parser() -> _Parser:
    parser = _Parser(prog="qcrbench", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("generate", help="sample or render a truth object")
    _add_common(p)

    p = subs.add_parser("simulate", help="draw Poisson frames from a truth object")
    p.add_argument("--params", required=True, help="theta.json from generate")
    _add_common(p)

    p = subs.add_parser("bounds", help="precision-bound maps and totals for a truth object")
    p.add_argument("--params", required=True, help="theta.json from generate")
    _add_common(p)

    p = subs.add_parser("estimate", help="reconstruct transmittance from noisy frames")
    p.add_argument("--counts", required=True, help="counts.imgx from simulate")
    _add_common(p)

    p = subs.add_parser("evaluate", help="score reconstructions against truth and bounds")
    p.add_argument("--recon", required=True, help="recon.imgx (any producer)")
    p.add_argument("--truth", required=True, help="truth.imgx from generate")
    p.add_argument("--bounds", required=True, help="bounds.json from bounds")
    p.add_argument("--estimator-label", dest="estimator_label", default=None,
                   help="estimator name recorded in the report")
    _add_common(p)

    p = subs.add_parser("reproduce", help="run the full pipeline from one config")
    _add_common(p)

    return parser


_HANDLERS = {
    "generate": cmd_generate,
    "simulate": cmd_simulate,
    "bounds": cmd_bounds,
    "estimate": cmd_estimate,
    "evaluate": cmd_evaluate,
    "reproduce": cmd_reproduce,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _HANDLERS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
