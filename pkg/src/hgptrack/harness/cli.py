"""Command-line interface.

    hgptrack gen-trips  --out DIR [--count N] [--duration S] [--script FILE]
    hgptrack train-bank --out DIR [--config FILE]
    hgptrack cluster    --bank FULL.bank.json --out DIR [--sizes 2,4,8,16]
    hgptrack sweep      --bank BANK --out DIR [--per ...] [--rates ...] [--plots]
    hgptrack demo       --bank BANK --out DIR [--per P] [--predictor hgp]
    hgptrack profile    --out DIR [--repeats N]

Every subcommand takes ``--config`` (YAML, schema in harness.config),
``--seed`` and ``--out``; flags override the file. Exit status is 0 on
success, 2 on a usage or contract error (with a one-line diagnostic on
stderr).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

from ..bank import KernelBank
from ..channel import ChannelConfig
from ..forecast.predictors import needs_bank
from ..metrics import profile_fit_time
from ..safety import FcwConfig, write_decision_log
from ..catc import write_cam_ndjson
from ..trajectory import ManeuverScript, TripFormatError, generate_synthetic_trip, save_trip_csv
from . import config as C
from . import experiment as E
from .scenario import demo_pair, transmitted

logger = logging.getLogger("hgptrack")

FULL_BANK = "full.bank.json"
REDUCED_BANK = "kernel.bank.json"


class CliError(Exception):
    """A contract violation reported to the user without a traceback."""


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in _floats(text))


def load_config(args) -> C.ExperimentConfig:
    cfg = C.ExperimentConfig.load(args.config) if args.config else C.ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out"] = args.out
    if getattr(args, "workers", None) is not None:
        changes["workers"] = args.workers
    return dataclasses.replace(cfg, **changes)


def load_bank(path) -> KernelBank:
    if path is None:
        raise CliError("this run needs a kernel bank: pass --bank FILE (create one with `hgptrack train-bank`)")
    p = Path(path)
    if not p.is_file():
        raise CliError(f"bank file {p} not found; create it with `hgptrack train-bank --out DIR` "
                       f"and pass DIR/{REDUCED_BANK}")
    try:
        return KernelBank.load(p)
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(f"bank file {p} is not a valid kernel bank: {exc}") from None


def _write_rows(path: Path, header, rows) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _report(paths) -> None:
    for p in paths:
        print(p)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_trips(args) -> int:
    cfg = load_config(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.script:
        trips = [generate_synthetic_trip(ManeuverScript.load(args.script), vehicle_id=Path(args.script).stem)]
    else:
        src = dataclasses.replace(cfg.trips, synthetic=args.count or cfg.trips.synthetic,
                                  duration=args.duration or cfg.trips.duration, paths=())
        trips = E.load_trips(src, cfg.seed, C.STREAM_TEST_TRIPS, "trip")
    paths = []
    for trip in trips:
        path = out / f"{trip.vehicle_id}.csv"
        save_trip_csv(trip, path)
        paths.append(path)
    _report(paths)
    return 0


def cmd_train_bank(args) -> int:
    cfg = load_config(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    trips = E.load_trips(cfg.train_trips, cfg.seed, C.STREAM_TRAIN_TRIPS, "train")
    seed = C.derive_seed(cfg.seed, C.STREAM_BANK)
    res = E.train_bank(trips, cfg.bank, seed)
    res.full.save(out / FULL_BANK)
    res.reduced.save(out / REDUCED_BANK)
    mp = _write_rows(out / "mp_samples.csv", ["interval_s"],
                     [[f"{v:.1f}"] for v in res.stats.model_persistency_samples])
    series, quarters = E.quarter_rates(res.stats)
    rate = _write_rows(out / "new_model_rate.csv", ["chunk", "rate"],
                       [[i, f"{v:.6f}"] for i, v in enumerate(series)])
    print(f"trips={len(trips)} steps={res.stats.total_steps} models={len(res.full)} "
          f"reduced={len(res.reduced)} mean_mp={res.stats.mean_persistency:.3f}s "
          f"new_model_rate={res.stats.new_model_rate:.4f}", file=sys.stderr)
    _report([out / FULL_BANK, out / REDUCED_BANK, mp, rate])
    return 0


def cmd_cluster(args) -> int:
    cfg = load_config(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    full = load_bank(args.bank)
    seed = C.derive_seed(cfg.seed, C.STREAM_BANK)
    trips = E.load_trips(cfg.trips, cfg.seed, C.STREAM_TEST_TRIPS, "trip")
    if args.trips is not None:
        trips = trips[: args.trips]
    rows = E.mp_vs_cluster_size(full, trips, args.sizes, cfg.bank, seed)
    path = _write_rows(out / "mp_vs_csize.csv", ["c_size", "models", "mean_mp", "breaches", "steps"],
                       [[r["c_size"], r["models"], f"{r['mean_mp']:.6f}", r["breaches"], r["steps"]]
                        for r in rows])
    _report([path])
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args)
    predictors = tuple(args.predictors.split(",")) if args.predictors else cfg.predictors
    cfg = dataclasses.replace(cfg, predictors=predictors)
    bank = load_bank(args.bank) if any(needs_bank(p) for p in predictors) else None
    trips = E.load_trips(cfg.trips, cfg.seed, C.STREAM_TEST_TRIPS, "trip")
    ch = cfg.channel
    cells = E.paper_cells(args.per or ch.per_grid, args.rates or ch.rate_grid)
    res = E.sweep(trips, predictors, cells, ch.replications, bank, E.predictor_config(cfg),
                  FcwConfig(cfg.fcw.t_d, cfg.fcw.a_req), cfg.seed, cfg.noise.accel_sigma, cfg.host,
                  ch.loss_model, ch.burst_length, cfg.workers)
    paths = E.write_sweep(res, cfg.out, raw=not args.no_raw, masks=args.masks)
    cfg.dump(Path(cfg.out) / "config.yaml")
    if args.plots:
        from .plots import plot_sweep
        paths += plot_sweep(cfg.out)
    _report(paths)
    return 0


def cmd_demo(args) -> int:
    cfg = load_config(args)
    bank = load_bank(args.bank) if needs_bank(args.predictor) else None
    script = ManeuverScript.load(args.script) if args.script else None
    hv, rv = demo_pair(script, cfg.host)
    tx = transmitted(rv, C.derive_seed(cfg.seed, C.STREAM_NOISE, 0, 0), cfg.noise.accel_sigma)
    channel = ChannelConfig(per=args.per, rate_hz=args.rate, seed=C.derive_seed(cfg.seed, C.STREAM_CHANNEL, 0, 0),
                            loss_model=cfg.channel.loss_model, burst_length=cfg.channel.burst_length)
    factory = E.factory_for(args.predictor, E.predictor_config(cfg), bank)
    run = E.run_receiver(rv, tx, hv, channel, factory, FcwConfig(cfg.fcw.t_d, cfg.fcw.a_req), keep_cams=True)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cam_path = out / "cam.ndjson"
    with open(cam_path, "w", encoding="utf-8", newline="\n") as fh:
        for cam in run.cams:
            write_cam_ndjson(cam, fh)
    dec_path = out / "decisions.csv"
    with open(dec_path, "w", encoding="utf-8", newline="") as fh:
        write_decision_log(run.decisions, fh)
    warns = [d for d in run.decisions if d.warn]
    print(f"decisions={len(run.decisions)} warns={len(warns)} "
          f"forecast_warns={sum(d.source != 'bsm' for d in warns)} "
          f"dropped={int(run.dropped.sum())}/{run.dropped.size}", file=sys.stderr)
    _report([cam_path, dec_path])
    return 0


def cmd_profile(args) -> int:
    cfg = load_config(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    prof = profile_fit_time(args.tw, repeats=args.repeats, seed=cfg.seed, restarts=cfg.bank.restarts)
    path = _write_rows(out / "fit_profile.csv", ["tw", "median_ms", "quad_fit_ms"],
                       [[tw, f"{1e3 * m:.3f}", f"{1e3 * (prof.quad_coeffs[0] * tw ** 2 + prof.quad_coeffs[1] * tw + prof.quad_coeffs[2]):.3f}"]
                        for tw, m in zip(prof.tw, prof.medians)])
    print(f"quadratic fit rmse={1e3 * prof.rmse:.3f} ms", file=sys.stderr)
    _report([path])
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--seed", type=int, help="root seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="hgptrack", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-trips", parents=[common], help="write synthetic trip CSVs")
    p.add_argument("--count", type=int)
    p.add_argument("--duration", type=float)
    p.add_argument("--script", help="maneuver script (YAML/JSON) for a single trip")
    p.set_defaults(func=cmd_gen_trips)

    p = sub.add_parser("train-bank", parents=[common], help="grow and cluster a kernel bank")
    p.set_defaults(func=cmd_train_bank)

    p = sub.add_parser("cluster", parents=[common], help="mean persistency versus cluster size")
    p.add_argument("--bank", help=f"unclustered bank ({FULL_BANK} from train-bank)")
    p.add_argument("--sizes", type=_ints, default=(2, 4, 8, 16))
    p.add_argument("--trips", type=int, help="evaluate on only the first N trips")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("sweep", parents=[common], help="PER and rate sweep, Table-I-shaped CSVs")
    p.add_argument("--bank", help="reduced kernel bank")
    p.add_argument("--per", type=_floats, help="PER grid, e.g. 0,0.5,0.9")
    p.add_argument("--rates", type=_floats, help="rate grid in Hz, e.g. 10,5,2,1")
    p.add_argument("--predictors", help="comma-separated predictor kinds")
    p.add_argument("--workers", type=int)
    p.add_argument("--no-raw", action="store_true", help="skip per-sample and decision logs")
    p.add_argument("--masks", action="store_true", help="also write per-packet drop masks")
    p.add_argument("--plots", action="store_true", help="render SVG plots (needs matplotlib)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("demo", parents=[common], help="one braking scenario with CAM and FCW logs")
    p.add_argument("--bank", help="reduced kernel bank")
    p.add_argument("--per", type=float, default=0.8)
    p.add_argument("--rate", type=float, default=10.0)
    p.add_argument("--predictor", default="hgp")
    p.add_argument("--script", help="lead-vehicle maneuver script (YAML/JSON)")
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("profile", parents=[common], help="GP fit time versus window size")
    p.add_argument("--tw", type=_ints, default=(10, 20, 30, 40))
    p.add_argument("--repeats", type=int, default=80)
    p.set_defaults(func=cmd_profile)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, C.ConfigError, TripFormatError, FileNotFoundError, ValueError) as exc:
        print(f"hgptrack {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
