"""Command-line entry point: ``magdiff <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from dataclasses import asdict, replace

import numpy as np

from . import __version__
from .baselines import fit_variogram, idw, ordinary_kriging, rbf
from .config import ConfigError, build, load_config
from .geodata import (DataError, default_field_spec, dumps_csv, from_arrays, load_csv, split_dataset,
                      survey, to_arrays)
from .engine import Model, SampleConfig, TrainConfig, ablate, interpolate, sweep_steps, train
from .mask import MaskScheduleConfig
from .metrics import metrics
from .render import BBox, grid_csv, grid_pgm, render_grid

log = logging.getLogger("magdiff")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

VARIANT_ALIASES = {"full": "full", "no-pim": "w/o PIM", "no-pic": "w/o PIC",
                   "w/o PIM": "w/o PIM", "w/o PIC": "w/o PIC"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------- helpers

def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _write_text(path: str, text: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_manifest(out_path: str, command: str, config: dict, seeds: dict) -> None:
    """Sidecar ``<out>.manifest.json``; contains no timestamps so reruns are byte-identical."""
    manifest = {
        "command": command,
        "config": config,
        "seeds": seeds,
        "versions": {"magdiff": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }
    _write_text(out_path + ".manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _arrays(path: str, require_value: bool = True):
    return to_arrays(load_csv(path, require_value))


def _train_config(args, **extra) -> TrainConfig:
    file_layer = load_config(args.config) if getattr(args, "config", None) else {}
    cli_layer = {k: getattr(args, k, None) for k in ("epochs", "steps_per_epoch", "lr", "lam", "k_min", "k_max",
                                                   "T", "k_v", "d", "seed", "instance_size")}
    if getattr(args, "disable_pim", False):
        cli_layer["disable_pim"] = True
    if getattr(args, "disable_pic", False):
        cli_layer["disable_pic"] = True
    cli_layer.update(extra)
    return build(TrainConfig, file_layer, cli_layer)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file (flags override it)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps-per-epoch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lam", "--lambda", dest="lam", type=float, help="weight of the variogram loss")
    p.add_argument("--k-min", type=int)
    p.add_argument("--k-max", type=int)
    p.add_argument("--T", type=int, help="diffusion steps used in training")
    p.add_argument("--k-v", type=int, help="neighbours per target in the variogram loss")
    p.add_argument("--d", type=int, help="embedding width")
    p.add_argument("--instance-size", type=int, help="samples drawn per training instance (default: all)")
    p.add_argument("--seed", type=int)


def _method_interpolator(args, train_cond=None):
    """Callable (m_co, x_co, m_ta) -> predictions for the requested method."""
    method = args.method
    if method == "pdg":
        if not args.checkpoint:
            raise UsageError("--checkpoint is required for --method pdg")
        model = Model.load(args.checkpoint)
        scfg = SampleConfig(args.steps, args.seed, args.samples)
        return lambda m_co, x_co, m_ta: interpolate(model, m_co, x_co, m_ta, scfg)
    if method == "idw":
        return lambda m_co, x_co, m_ta: idw(m_co, x_co, m_ta, args.power)
    if method == "kriging":
        def ok(m_co, x_co, m_ta):
            return ordinary_kriging(m_co, x_co, m_ta, fit_variogram(m_co, x_co))[0]
        return ok
    if method == "rbf":
        return lambda m_co, x_co, m_ta: rbf(m_co, x_co, m_ta, args.kernel_width)
    raise UsageError(f"unknown method {method!r}")


def _add_method_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=("pdg", "idw", "kriging", "rbf"), default="pdg")
    p.add_argument("--checkpoint", help="PDG1 checkpoint (method pdg)")
    p.add_argument("--steps", type=int, default=10, help="reverse sampling steps (method pdg)")
    p.add_argument("--samples", type=int, default=SampleConfig.n_samples,
                   help="reverse chains averaged per target (method pdg)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--power", type=float, default=2.0, help="IDW power")
    p.add_argument("--kernel-width", type=float, default=0.05, help="RBF kernel width")


def _table_csv(rows: list[dict], columns: list[str]) -> str:
    lines = [",".join(columns)]
    for r in rows:
        lines.append(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in columns))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- subcommands

def cmd_synth(args) -> int:
    spec = replace(default_field_spec(args.noise_sigma), seed=args.seed)
    samples = survey(spec, args.n, n_tracks=args.tracks, step_len=args.step_len, turn_sigma=args.turn_sigma)
    os.makedirs(args.out_dir, exist_ok=True)
    _write_text(os.path.join(args.out_dir, "all.csv"), dumps_csv(samples))
    parts = split_dataset(samples, (0.8, 0.1, 0.1), seed=args.seed)
    for name, part in zip(("train", "val", "test"), parts):
        _write_text(os.path.join(args.out_dir, f"{name}.csv"), dumps_csv(part))
    _write_manifest(os.path.join(args.out_dir, "all.csv"), "synth",
                    {"n": args.n, "tracks": args.tracks, "step_len": args.step_len, "turn_sigma": args.turn_sigma,
                     "noise_sigma": args.noise_sigma, "split": [0.8, 0.1, 0.1],
                     "field": json.loads(json.dumps(asdict(spec)))}, {"seed": args.seed})
    print(f"wrote {len(samples)} samples to {args.out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _train_config(args)
    m, x = _arrays(args.train)
    if len(x) < 2:
        raise DataError("training set needs at least 2 samples")
    log_path = args.log or args.out + ".loss.csv"
    model, hist = train(m, x, cfg, log_path=log_path)
    model.save(args.out)
    _write_manifest(args.out, "train", asdict(cfg), {"seed": cfg.seed})
    print(json.dumps({"steps": len(hist), "final_loss_eps": hist[-1].loss_eps,
                      "final_loss_kriging": hist[-1].loss_kriging}))
    return EXIT_OK


def cmd_interpolate(args) -> int:
    m_co, x_co = _arrays(args.conditions)
    m_ta, _ = _arrays(args.targets, require_value=False)
    pred = _method_interpolator(args)(m_co, x_co, m_ta)
    _write_text(args.out, dumps_csv(from_arrays(m_ta, pred)))
    _write_manifest(args.out, "interpolate", {"method": args.method, "checkpoint": args.checkpoint,
                                              "steps": args.steps, "samples": args.samples, "power": args.power,
                                              "kernel_width": args.kernel_width}, {"seed": args.seed})
    return EXIT_OK


def cmd_eval(args) -> int:
    m_t, y_t = _arrays(args.truth)
    m_p, y_p = _arrays(args.pred)
    if len(y_t) != len(y_p):
        raise DataError(f"truth has {len(y_t)} rows, predictions {len(y_p)}")
    if not np.array_equal(m_t, m_p):
        raise DataError("truth and prediction files list different locations")
    text = json.dumps(metrics(y_t, y_p).as_dict(), indent=2) + "\n"
    if args.out:
        _write_text(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_ablate(args) -> int:
    variants = []
    for v in args.variants.split(","):
        if v not in VARIANT_ALIASES:
            raise UsageError(f"unknown variant {v!r}; choose from full, no-pim, no-pic")
        variants.append(VARIANT_ALIASES[v])
    base = _train_config(args)
    train_set, test_set = _arrays(args.train), _arrays(args.test)
    os.makedirs(args.out_dir, exist_ok=True)

    def dump(name, seed, pred):
        tag = name.replace("w/o ", "no-").lower()
        _write_text(os.path.join(args.out_dir, f"pred_{tag}_seed{seed}.csv"), dumps_csv(from_arrays(test_set[0], pred)))

    rows = ablate(train_set, test_set, variants, base, SampleConfig(args.steps, 0, args.samples), args.seeds, dump)
    out = os.path.join(args.out_dir, "ablation.csv")
    _write_text(out, _table_csv(rows, ["variant", "rmse", "mae", "mape", "mse"]))
    _write_manifest(out, "ablate", {**asdict(base), "variants": variants, "steps": args.steps,
                                        "samples": args.samples},
                    {"seeds": list(args.seeds)})
    sys.stdout.write(_table_csv(rows, ["variant", "rmse", "mape"]))
    return EXIT_OK


def cmd_sweep_steps(args) -> int:
    model = Model.load(args.checkpoint)
    cond, test = _arrays(args.conditions), _arrays(args.test)
    rows = sweep_steps(model, cond, test, args.steps, args.seed, args.samples)
    text = _table_csv(rows, ["steps", "rmse", "mae", "mape", "mse", "seconds"])
    _write_text(args.out, text)
    _write_manifest(args.out, "sweep-steps", {"checkpoint": args.checkpoint, "steps": list(args.steps),
                                                  "samples": args.samples},
                    {"seed": args.seed})
    sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep_k(args) -> int:
    """K_max x K_min grid. Retrains per cell unless --checkpoint is given (then only sampling changes)."""
    train_set, test_set = _arrays(args.train), _arrays(args.test)
    base_model = Model.load(args.checkpoint) if args.checkpoint else None
    base = _train_config(args) if base_model is None else base_model.config
    rows = []
    for k_max in args.k_max_values:
        for k_min in args.k_min_values:
            if k_min > k_max:
                raise UsageError(f"k_min {k_min} exceeds k_max {k_max}")
            if base_model is None:
                cfg = replace(base, k_min=k_min, k_max=k_max)
                model, _ = train(*train_set, cfg)
                override = None
            else:
                model = base_model
                override = MaskScheduleConfig(k_min, k_max, base.T)
            pred = interpolate(model, *train_set, test_set[0], SampleConfig(args.steps, args.seed, args.samples),
                               k_override=override)
            rec = metrics(test_set[1], pred)
            rows.append({"k_max": k_max, "k_min": k_min, **rec.as_dict()})
    text = _table_csv(rows, ["k_max", "k_min", "rmse", "mae", "mape", "mse"])
    _write_text(args.out, text)
    _write_manifest(args.out, "sweep-k", {**asdict(base), "k_max_values": args.k_max_values,
                                          "k_min_values": args.k_min_values, "steps": args.steps, "samples": args.samples,
                                          "retrained": base_model is None}, {"seed": args.seed})
    sys.stdout.write(text)
    return EXIT_OK


def cmd_render(args) -> int:
    m_co, x_co = _arrays(args.conditions)
    bbox = BBox.parse(args.bbox)
    grid = render_grid(_method_interpolator(args), (m_co, x_co), bbox, args.nx, args.ny)
    _write_text(args.out_prefix + ".csv", grid_csv(grid))
    _write_text(args.out_prefix + ".pgm", grid_pgm(grid))
    _write_manifest(args.out_prefix + ".csv", "render", {"method": args.method, "checkpoint": args.checkpoint,
                                                         "bbox": args.bbox, "nx": args.nx, "ny": args.ny,
                                                         "steps": args.steps, "samples": args.samples}, {"seed": args.seed})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="magdiff", description="Diffusion-based interpolation of scattered magnetic-field data.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic survey dataset and its 8:1:1 split")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--tracks", type=int, default=20)
    p.add_argument("--step-len", type=float, default=0.01)
    p.add_argument("--turn-sigma", type=float, default=0.15)
    p.add_argument("--noise-sigma", type=float, default=27.0, help="measurement noise, nT")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write a PDG1 checkpoint")
    p.add_argument("--train", required=True, help="training CSV")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="per-step loss CSV (default: <out>.loss.csv)")
    p.add_argument("--disable-pim", action="store_true", help="ablation: full attention instead of top-k mask")
    p.add_argument("--disable-pic", action="store_true", help="ablation: drop the variogram loss")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("interpolate", help="predict values at target locations")
    p.add_argument("--conditions", required=True)
    p.add_argument("--targets", required=True, help="CSV with lon,lat[,value]; values are ignored")
    p.add_argument("--out", required=True)
    _add_method_flags(p)
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("eval", help="metrics JSON for predictions against truth")
    p.add_argument("--truth", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and score full / no-pim / no-pic variants")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--variants", default="full,no-pim,no-pic")
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--samples", type=int, default=SampleConfig.n_samples, help="reverse chains averaged per target")
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep-steps", help="RMSE and runtime across sampling step counts")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--conditions", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--steps", type=_int_list, default=[5, 10, 20, 30, 40, 50])
    p.add_argument("--samples", type=int, default=SampleConfig.n_samples, help="reverse chains averaged per target")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_steps)

    p = sub.add_parser("sweep-k", help="RMSE across K_max x K_min receptive-field settings")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--checkpoint", help="reuse one model and vary only the sampling-time mask")
    p.add_argument("--k-max-values", type=_int_list, default=[1500, 1000, 500])
    p.add_argument("--k-min-values", type=_int_list, default=[32, 64])
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--samples", type=int, default=SampleConfig.n_samples, help="reverse chains averaged per target")
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep_k)

    p = sub.add_parser("render", help="evaluate a method on a regular grid; writes CSV and PGM")
    p.add_argument("--conditions", required=True)
    p.add_argument("--bbox", default="0,1,0,1", help="lon_min,lon_max,lat_min,lat_max")
    p.add_argument("--nx", type=int, default=64)
    p.add_argument("--ny", type=int, default=64)
    p.add_argument("--out-prefix", required=True)
    _add_method_flags(p)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"magdiff: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"magdiff: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ConfigError, OSError, ValueError, KeyError) as exc:
        print(f"magdiff: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
