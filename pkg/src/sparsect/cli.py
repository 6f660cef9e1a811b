"""Command-line interface: ``sparsect <subcommand> ...``.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io as _io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .degrade import DegradeConfig, Degrader, SeverityMap, auto_num_detectors, degrade_views
from .exceptions import ConfigurationError, FormatError, InvalidInputError, InvalidLevelError, NumericalError
from .metrics import psnr, psnr_is_exact, rmse_hu, ssim
from .phantoms import random_ellipse_phantom, shepp_logan
from .restorer import IdentityRestorer, OracleRestorer, ReferenceRestorer, RestorerState
from .sampler import SpdpsConfig, sequential_sample, spdps_sample
from .tomo import Image
from .training import TrainConfig, train

log = logging.getLogger("sparsect")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

# keys accepted in a train config file besides TrainConfig fields
DATA_KEYS = {"size": int, "n_train": int, "n_ellipses": int, "num_detectors": int, "views": str,
             "include_shepp": bool}
DATA_DEFAULTS = {"size": 64, "n_train": 40, "n_ellipses": 6, "num_detectors": 0, "views": "",
                 "include_shepp": False}


class UsageError(Exception):
    pass


def _parse_bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"not a boolean: {text!r}")


def read_kv_config(path) -> dict:
    """Flat ``key = value`` file; blank lines and ``#`` comments ignored."""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read config {path}: {exc.strerror}") from None
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def _coerce(key, value, kind):
    if kind is bool:
        return _parse_bool(value)
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"bad value for {key}: {value!r}") from None


def effective_train_config(file_values: dict, overrides: dict):
    """Merge defaults < config file < CLI flags; returns ``(TrainConfig, data_options)``."""
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    kinds = {name: type(f.default) for name, f in fields.items()}
    merged_train, merged_data = {}, dict(DATA_DEFAULTS)
    for source in (file_values, overrides):
        for key, value in source.items():
            if value is None:
                continue
            if key in kinds:
                merged_train[key] = _coerce(key, value, kinds[key])
            elif key in DATA_KEYS:
                merged_data[key] = _coerce(key, value, DATA_KEYS[key])
            else:
                raise ConfigurationError(f"unknown config key {key!r}")
    return TrainConfig(**merged_train), merged_data


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def write_csv(path, header, rows, config: dict):
    """CSV with a leading ``# config_hash=...`` line; ``path=None`` prints to stdout."""
    buf = _io.StringIO()
    buf.write(f"# config_hash={config_hash(config)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    if path is None:
        sys.stdout.write(buf.getvalue())
    else:
        io.atomic_write_text(path, buf.getvalue())


def echo_config(out_path, config: dict):
    """Write the effective configuration next to ``out_path``."""
    target = Path(str(out_path) + ".config.json")
    io.atomic_write_text(target, json.dumps(config, indent=1, sort_keys=True, default=str) + "\n")


def _severity(args) -> SeverityMap:
    if getattr(args, "severity_map", None):
        return SeverityMap.from_file(args.severity_map)
    return SeverityMap()


def _degrader_for(img: Image, severity, num_detectors=None) -> Degrader:
    size = min(img.width, img.height)
    cfg = DegradeConfig.for_grid(img.width, img.height, img.pixel_size, severity=severity,
                                 num_detectors=num_detectors or auto_num_detectors(size))
    return Degrader(cfg)


def _split(text, kind):
    try:
        return [kind(tok) for tok in str(text).split(",") if tok.strip()]
    except ValueError:
        raise UsageError(f"cannot parse list {text!r}") from None


# --- subcommands -----------------------------------------------------------


def cmd_phantom(args):
    if args.kind == "shepp":
        img = shepp_logan(args.size, supersample=args.supersample)
    else:
        img = random_ellipse_phantom(args.seed, args.size, n_ellipses=args.n_ellipses,
                                     supersample=args.supersample)
    io.write_image(args.out, img)
    if args.png:
        io.write_png(args.png, img, tuple(args.window))
    echo_config(args.out, vars(args))


def cmd_degrade(args):
    img = io.read_image(args.input)
    severity = _severity(args)
    deg = _degrader_for(img, severity, args.detectors)
    if args.views is not None:
        out = degrade_views(img.data, args.views, deg.cfg)
    elif args.level is not None:
        out = deg(img.data, args.level)
    else:
        raise UsageError("degrade needs --level or --views")
    result = Image(np.asarray(out, dtype=np.float64), img.pixel_size)
    io.write_image(args.out, result)
    if args.png:
        io.write_png(args.png, result, tuple(args.window))
    echo_config(args.out, {**vars(args), "views_per_level": severity.views_per_level,
                           "num_detectors": deg.cfg.geometry.num_detectors})


def _training_set(data, seed):
    size = data["size"]
    images = [random_ellipse_phantom(10_000 + seed * 1_000 + i, size, n_ellipses=data["n_ellipses"]).data
              for i in range(data["n_train"])]
    if data["include_shepp"]:
        images.append(shepp_logan(size).data)
    return images


def _train_from(cfg: TrainConfig, data: dict, progress=None):
    severity = SeverityMap(tuple(_split(data["views"], int))) if data["views"] else SeverityMap()
    size = data["size"]
    n_det = data["num_detectors"] or auto_num_detectors(size)
    deg = Degrader(DegradeConfig.for_grid(size, severity=severity, num_detectors=n_det))
    return train(_training_set(data, cfg.seed), cfg, deg, progress=progress), deg


def cmd_train(args):
    file_values = read_kv_config(args.config) if args.config else {}
    overrides = {"seed": args.seed, "epochs": args.epochs, "learning_rate": args.learning_rate,
                 "epct": None if args.epct is None else str(args.epct), "size": args.size,
                 "n_train": args.n_train}
    cfg, data = effective_train_config(file_values, overrides)
    result, _ = _train_from(cfg, data)
    io.write_checkpoint(args.out, result.state)
    if args.ema_out:
        io.write_checkpoint(args.ema_out, RestorerState(result.state.arch, result.ema.theta))
    config = {**cfg.to_dict(), **data}
    history = args.history or str(args.out) + ".history.csv"
    write_csv(history, ["iteration", "loss_restore", "loss_compose"],
              [(i, repr(a), "" if np.isnan(b) else repr(b)) for i, a, b in result.history], config)
    echo_config(args.out, config)


def _restorer_from(args, reference=None):
    kind = args.restorer
    if kind is None:
        kind = "reference" if args.checkpoint else "identity"
    if kind == "reference":
        if not args.checkpoint:
            raise UsageError("--restorer reference needs --checkpoint")
        return ReferenceRestorer(io.read_checkpoint(args.checkpoint))
    if kind == "oracle":
        if reference is None:
            raise UsageError("--restorer oracle needs --ref")
        return OracleRestorer(reference)
    return IdentityRestorer()


def _run_strategy(strategy, x_T, level, restorer, deg, nfe, m, tau):
    if strategy == "sequential":
        return sequential_sample(x_T, level, restorer, deg, keep_estimates=False)
    if strategy == "spdps":
        return spdps_sample(x_T, level, restorer, deg, SpdpsConfig(nfe, m, tau), keep_estimates=False)
    raise UsageError(f"unknown strategy {strategy!r}")


def cmd_reconstruct(args):
    img = io.read_image(args.input)
    severity = _severity(args)
    ref = io.read_image(args.ref).data if args.ref else None
    deg = _degrader_for(img, severity, args.detectors)
    level = severity.level_for_views(args.views)
    restorer = _restorer_from(args, ref)
    if ref is not None and args.restorer == "oracle" and ref.shape != img.data.shape:
        raise InvalidInputError("reference and input grids differ")
    trace = _run_strategy(args.strategy, img.data.astype(np.float64), level, restorer, deg,
                          args.nfe, args.m, args.tau)
    out = Image(trace.final, img.pixel_size)
    io.write_image(args.out, out)
    if args.png:
        io.write_png(args.png, out, tuple(args.window))
    config = {**vars(args), "level": level, "nfe_used": trace.nfe, "early_stop": trace.early_stop}
    if args.trace:
        write_csv(args.trace, ["step", "level_before", "level_after", "ssim_prev", "reset_flag"],
                  list(trace.rows()), config)
    echo_config(args.out, config)


def metric_row(ref, test):
    return (repr(rmse_hu(ref, test)), repr(psnr(ref, test)), repr(ssim(ref, test)),
            int(psnr_is_exact(ref, test)))


METRIC_HEADER = ["rmse_hu", "psnr_db", "ssim", "psnr_exact"]


def cmd_evaluate(args):
    ref = io.read_image(args.ref)
    test = io.read_image(args.test)
    if ref.data.shape != test.data.shape:
        raise InvalidInputError(f"grids differ: {ref.data.shape} vs {test.data.shape}")
    write_csv(args.out, METRIC_HEADER, [metric_row(ref.data, test.data)], vars(args))


def _eval_setup(args):
    """Restorer, degrader and held-out phantoms shared by compare/ablate."""
    if args.checkpoint:
        state = io.read_checkpoint(args.checkpoint)
        severity = _severity(args)
        n_det = args.detectors or auto_num_detectors(args.size)
        deg = Degrader(DegradeConfig.for_grid(args.size, severity=severity, num_detectors=n_det))
        restorer = ReferenceRestorer(state)
        train_info = {"checkpoint": args.checkpoint}
    else:
        file_values = read_kv_config(args.config) if args.config else {}
        cfg, data = effective_train_config(
            file_values, {"seed": args.seed, "epochs": args.train_epochs, "size": args.size})
        result, deg = _train_from(cfg, data)
        restorer = ReferenceRestorer(result.state)
        train_info = {**cfg.to_dict(), **data}
    if args.size != deg.cfg.width:
        raise ConfigurationError("evaluation size differs from the training grid")
    level = deg.severity.level_for_views(args.views)
    truths = [random_ellipse_phantom(args.seed * 1_000 + i, args.size).data for i in range(args.n_images)]
    inputs = [deg(x, level) for x in truths]
    return restorer, deg, level, truths, inputs, train_info


def _mean_metrics(finals, truths):
    rows = np.array([[rmse_hu(t, f), psnr(t, f), ssim(t, f)] for f, t in zip(finals, truths)])
    return rows.mean(axis=0)


def cmd_compare(args):
    strategies = _split(args.strategies, str)
    restorer, deg, level, truths, inputs, info = _eval_setup(args)
    rows = []
    for strategy in strategies:
        traces = [_run_strategy(strategy, x, level, restorer, deg, args.nfe, args.m, args.tau) for x in inputs]
        rmse, p, s = _mean_metrics([tr.final for tr in traces], truths)
        nfe = int(np.mean([tr.nfe for tr in traces]))
        rows.append((strategy, args.views, nfe, repr(float(rmse)), repr(float(p)), repr(float(s))))
    config = {**vars(args), "train": info}
    write_csv(args.out, ["strategy", "views", "nfe", "rmse_hu", "psnr_db", "ssim"], rows, config)
    if args.out:
        echo_config(args.out, config)


def cmd_ablate(args):
    taus = _split(args.tau, float)
    ms = _split(args.m, int)
    restorer, deg, level, truths, inputs, info = _eval_setup(args)
    rows = []
    for tau in taus:
        for m in ms:
            traces = [_run_strategy("spdps", x, level, restorer, deg, args.nfe, m, tau) for x in inputs]
            rmse, p, s = _mean_metrics([tr.final for tr in traces], truths)
            resets = float(np.mean([tr.n_resets for tr in traces]))
            rows.append((tau, m, args.views, args.nfe, repr(float(rmse)), repr(float(p)), repr(float(s)), resets))
    config = {**vars(args), "train": info}
    write_csv(args.out, ["tau", "m", "views", "nfe", "rmse_hu", "psnr_db", "ssim", "mean_resets"], rows, config)
    if args.out:
        echo_config(args.out, config)


# --- parser ----------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="sparsect", description="Sparse-view CT generalized diffusion toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_window(p):
        p.add_argument("--png", help="also export an 8-bit PNG")
        p.add_argument("--window", type=float, nargs=2, default=(-1000.0, 2000.0), metavar=("LO", "HI"),
                       help="HU display window for PNG export")

    p = sub.add_parser("phantom", help="generate a phantom image")
    p.add_argument("--kind", choices=["shepp", "ellipses"], default="shepp")
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-ellipses", type=int, default=6)
    p.add_argument("--supersample", type=int, default=1)
    p.add_argument("--out", required=True)
    add_window(p)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("degrade", help="apply the sparse-view degradation D(x, t)")
    p.add_argument("--level", type=int)
    p.add_argument("--views", type=int, help="explicit view count, overrides --level")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--severity-map", help="text file listing view counts, densest first")
    p.add_argument("--detectors", type=int, help="detector count (default: scaled to the grid)")
    p.add_argument("--seed", type=int, default=0)
    add_window(p)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("train", help="train the reference restorer")
    p.add_argument("--config", help="key=value file")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--ema-out", help="also write the EMA weights as a checkpoint")
    p.add_argument("--history", help="loss history CSV (default: <out>.history.csv)")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--epct", type=_parse_bool, default=None)
    p.add_argument("--size", type=int)
    p.add_argument("--n-train", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="sample a clean image from a sparse-view input")
    p.add_argument("--strategy", choices=["sequential", "spdps"], default="spdps")
    p.add_argument("--views", type=int, default=18, help="view count of the input (18, 36, 72, ...)")
    p.add_argument("--nfe", type=int, default=10)
    p.add_argument("--tau", type=float, default=0.97)
    p.add_argument("--m", type=int, default=4)
    p.add_argument("--checkpoint")
    p.add_argument("--restorer", choices=["reference", "oracle", "identity"])
    p.add_argument("--ref", help="ground truth image (required by the oracle restorer)")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="per-step trace CSV")
    p.add_argument("--severity-map")
    p.add_argument("--detectors", type=int)
    p.add_argument("--seed", type=int, default=0)
    add_window(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="RMSE [HU], PSNR [dB], SSIM between two images")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    def add_eval(p):
        p.add_argument("--views", type=int, default=18)
        p.add_argument("--nfe", type=int, default=10)
        p.add_argument("--size", type=int, default=64)
        p.add_argument("--n-images", type=int, default=4)
        p.add_argument("--checkpoint", help="trained restorer; trains a quick one when omitted")
        p.add_argument("--config", help="train config used when no checkpoint is given")
        p.add_argument("--train-epochs", type=int, default=None)
        p.add_argument("--severity-map")
        p.add_argument("--detectors", type=int)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", help="CSV path (default: stdout)")

    p = sub.add_parser("compare", help="compare sampling strategies on held-out phantoms")
    p.add_argument("--strategies", default="sequential,spdps")
    p.add_argument("--tau", type=float, default=0.97)
    p.add_argument("--m", type=int, default=4)
    add_eval(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("ablate", help="SPDPS sensitivity grid over tau and m")
    p.add_argument("--tau", default="0.97,0.98,0.99")
    p.add_argument("--m", default="2,3,4")
    add_eval(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (UsageError, InvalidLevelError) as exc:
        print(f"sparsect {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigurationError as exc:
        print(f"sparsect {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, InvalidInputError, FileNotFoundError) as exc:
        print(f"sparsect {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"sparsect {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main():
    sys.exit(run())
