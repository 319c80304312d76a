"""Command-line surface: gendata, train, rollout, verify, report.

Every command resolves its settings from built-in defaults, then an optional
JSON config file, then explicit flags (flags win), and writes the resolved
settings plus the tool version into its output directory. All commands are
deterministic for a fixed seed. Exit codes: 0 success, 1 usage/contract
error, 2 runtime or numeric failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys

import numpy as np

from . import __version__, fields, integrators, pendulum, training, verify


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def thread_count():
    """Parallelism cap from METRIFLOW_THREADS (default 1)."""
    raw = os.environ.get("METRIFLOW_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _map_ordered(fn, items):
    workers = thread_count()
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _resolve(defaults, config_path, flag_values):
    settings = dict(defaults)
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
        unknown = sorted(set(loaded) - set(defaults))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        settings.update(loaded)
    for key, value in flag_values.items():
        if value is not None:
            settings[key] = value
    return settings


def _write_provenance(outdir, command, settings):
    os.makedirs(outdir, exist_ok=True)
    payload = {"command": command, "version": __version__, "settings": settings}
    with open(os.path.join(outdir, "resolved_config.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


# ---------------------------------------------------------------------------
# gendata


GENDATA_DEFAULTS = {
    "seed": 0,
    "train": 500,
    "test": 100,
    "dt": 0.1,
    "horizon": 5.0,
    "gamma_min": 0.05,
    "gamma_max": 0.30,
}


def cmd_gendata(args):
    s = _resolve(GENDATA_DEFAULTS, args.config, {
        "seed": args.seed, "train": args.train, "test": args.test,
        "dt": args.dt, "horizon": args.horizon,
        "gamma_min": args.gamma_min, "gamma_max": args.gamma_max,
    })
    if not 0 <= s["gamma_min"] <= s["gamma_max"]:
        raise UsageError("damping range must satisfy 0 <= min <= max")
    dataset = pendulum.generate_dataset(
        seed=s["seed"], n_train=s["train"], n_test=s["test"],
        dt=s["dt"], horizon=s["horizon"],
        gamma_range=(s["gamma_min"], s["gamma_max"]),
    )
    pendulum.save_dataset(dataset, args.out)
    _write_provenance(args.out, "gendata", s)
    print(f"wrote {len(dataset.train)} train + {len(dataset.test)} test trajectories to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# train


TRAIN_DEFAULTS = {
    "seed": 0,
    "model_kind": "metriplectic-hard",
    "width": 64,
    "hidden": 2,
    "frequencies": 8,
    "h_mode": "learned",
    "shrink": True,
    "rank": 2,
    "lambda_soft": 1e-2,
    "lambda_reg": 1e-4,
    "batch_size": 256,
    "epochs": 200,
    "lr_max": 1e-3,
    "lr_min": 1e-5,
    "clip_norm": 1.0,
}

_MODEL_KINDS = ("metriplectic-hard", "metriplectic-soft", "baseline")


def _field_config_from(s, dataset):
    kind = s["model_kind"]
    if kind not in _MODEL_KINDS:
        raise UsageError(f"model_kind must be one of {_MODEL_KINDS}")
    common = dict(
        d=2, hidden=s["hidden"], width=s["width"], n_frequencies=s["frequencies"],
        time_scale=dataset.horizon, mass=dataset.params.mass,
        gravity=dataset.params.gravity, length=dataset.params.length,
    )
    if kind == "baseline":
        return fields.FieldConfig(kind="baseline", **common)
    return fields.FieldConfig(
        kind="metriplectic",
        degeneracy="hard" if kind == "metriplectic-hard" else "soft",
        h_mode=s["h_mode"], shrink=s["shrink"], rank=s["rank"],
        **common,
    )


def cmd_train(args):
    s = _resolve(TRAIN_DEFAULTS, args.config, {
        "seed": args.seed, "model_kind": args.model_kind, "width": args.width,
        "hidden": args.hidden, "frequencies": args.frequencies,
        "h_mode": args.h_mode, "shrink": args.shrink, "rank": args.rank,
        "lambda_soft": args.lambda_soft, "lambda_reg": args.lambda_reg,
        "batch_size": args.batch_size, "epochs": args.epochs,
        "lr_max": args.lr_max, "lr_min": args.lr_min, "clip_norm": args.clip_norm,
    })
    dataset = pendulum.load_dataset(args.data)
    field = fields.make_field(_field_config_from(s, dataset), seed=s["seed"])
    loss_cfg = training.LossConfig(
        lambda_soft=s["lambda_soft"], lambda_reg=s["lambda_reg"],
        batch_size=s["batch_size"], epochs=s["epochs"],
        lr_max=s["lr_max"], lr_min=s["lr_min"], clip_norm=s["clip_norm"],
        seed=s["seed"],
    )
    xs, ys = dataset.pairs("train")
    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, "checkpoint.json")
    meta = {"dataset_seed": dataset.seed, "dt": dataset.dt, "model_kind": s["model_kind"]}
    try:
        result = training.train(xs, ys, dataset.dt, field, loss_cfg)
    except training.TrainingDiverged as exc:
        field.store = exc.last_good_store
        fields.save_checkpoint(ckpt_path, field, meta={**meta, "diverged": True})
        raise RuntimeError(f"{exc}; last good checkpoint written to {ckpt_path}") from exc
    fields.save_checkpoint(ckpt_path, field, meta={**meta, "final_loss": result.final_loss})
    result.save_curve_csv(os.path.join(args.out, "loss_curve.csv"))
    _write_provenance(args.out, "train", s)
    print(f"trained {s['model_kind']} for {result.steps} steps, final loss {result.final_loss:.6f}")
    return 0


# ---------------------------------------------------------------------------
# rollout


ROLLOUT_DEFAULTS = {
    "h": 0.1,
    "horizon": 5.0,
    "sampler": "auto",
    "projection": "off",
    "projection_eps": 1e-9,
    "prox_mode": None,
    "limit": None,
}


def cmd_rollout(args):
    s = _resolve(ROLLOUT_DEFAULTS, args.config, {
        "h": args.h, "horizon": args.horizon, "sampler": args.sampler,
        "projection": args.projection, "projection_eps": args.projection_eps,
        "prox_mode": args.prox_mode, "limit": args.limit,
    })
    field, _meta = fields.load_checkpoint(args.checkpoint)
    kind = field.config.kind
    sampler = s["sampler"]
    if sampler == "auto":
        sampler = "strang-prox" if kind == "metriplectic" else "rk4"
    if sampler == "strang-prox" and kind != "metriplectic":
        raise UsageError("the split sampler needs a metriplectic checkpoint")
    cfg = integrators.SamplerConfig(
        h=s["h"], horizon=s["horizon"], scheme=sampler,
        projection_eps=s["projection_eps"] if s["projection"] == "on" else None,
        prox_mode=s["prox_mode"], time_scale=field.config.time_scale,
    )
    if args.x0 is not None:
        parts = [float(tok) for tok in args.x0.split(",")]
        if len(parts) != 2:
            raise UsageError("--x0 expects 'q,p'")
        x0s = np.array([parts])
        params = pendulum.PendulumParams(field.config.mass, field.config.gravity,
                                         field.config.length)
    else:
        dataset = pendulum.load_dataset(args.data)
        x0s = dataset.initial_states("test")
        params = dataset.params
    if s["limit"] is not None:
        x0s = x0s[: int(s["limit"])]
    os.makedirs(args.out, exist_ok=True)
    records = _map_ordered(lambda x0: integrators.rollout(field, x0, cfg, params), list(x0s))
    incomplete = 0
    for i, rec in enumerate(records):
        rec.to_csv(os.path.join(args.out, f"traj_{i:04d}.csv"))
        incomplete += 0 if rec.complete else 1
    _write_provenance(args.out, "rollout", {**s, "sampler": sampler,
                                            "checkpoint": os.path.abspath(args.checkpoint)})
    msg = f"wrote {len(records)} rollouts to {args.out}"
    if incomplete:
        msg += f" ({incomplete} incomplete)"
    print(msg)
    return 0


# ---------------------------------------------------------------------------
# verify


VERIFY_DEFAULTS = {
    "points": 1000,
    "seed": 0,
    "gamma": 0.15,
    "h_grid": "0.1,0.05,0.025,0.0125",
}


def cmd_verify(args):
    s = _resolve(VERIFY_DEFAULTS, args.config, {
        "points": args.points, "seed": args.seed, "gamma": args.gamma,
        "h_grid": args.h_grid,
    })
    if args.checkpoint is None and not args.analytic:
        raise UsageError("provide --checkpoint PATH or --analytic")
    if args.analytic:
        field = fields.ShrinkPendulumField(gamma=s["gamma"])
        label = "analytic-shrink-pendulum"
    else:
        field, _meta = fields.load_checkpoint(args.checkpoint)
        if field.config.kind != "metriplectic":
            raise UsageError("verification needs a metriplectic field, not a baseline")
        label = os.path.abspath(args.checkpoint)
    h_grid = tuple(float(tok) for tok in str(s["h_grid"]).split(","))
    report = {
        "field": label,
        "conservation_dissipation": verify.verify_conservation_dissipation(
            field, n_points=s["points"], seed=s["seed"]
        ),
        "step_convergence": verify.verify_step_guarantees(field, h_grid=h_grid),
        "projected_descent": verify.verify_projected_descent(field, seed=s["seed"]),
    }
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "verification.json"), report)
    _write_provenance(args.out, "verify", s)
    for name in ("conservation_dissipation", "step_convergence", "projected_descent"):
        section = report[name]
        flags = [f"{k}={v['pass']}" for k, v in section.items()
                 if isinstance(v, dict) and "pass" in v]
        if "pass" in section:
            flags.append(f"pass={section['pass']}")
        print(f"{name}: " + (", ".join(flags) if flags else "reported"))
    return 0


# ---------------------------------------------------------------------------
# report


REPORT_DEFAULTS = {
    "sw2_projections": 128,
    "seed": 0,
}


def _load_rollouts(rollout_dir):
    names = sorted(n for n in os.listdir(rollout_dir)
                   if n.startswith("traj_") and n.endswith(".csv"))
    if not names:
        raise UsageError(f"no rollout CSVs in {rollout_dir}")
    return [integrators.RolloutRecord.from_csv(os.path.join(rollout_dir, n)) for n in names]


def _metrics_block(records, truth_terminals, s):
    per = [pendulum.physics_metrics(r.energy, r.dedt) for r in records]
    agg = pendulum.aggregate_metrics(per)
    terminals = np.stack([r.states[-1] for r in records])
    agg["sw2"] = pendulum.sliced_w2(
        terminals, truth_terminals,
        n_projections=s["sw2_projections"], seed=s["seed"],
    )
    per_traj = {
        key: [None if m is None else m[key] for m in per]
        for key in ("increase_fraction", "max_energy_ratio",
                    "final_energy_ratio", "sign_error_fraction")
    }
    return agg, per_traj


def cmd_report(args):
    s = _resolve(REPORT_DEFAULTS, args.config, {
        "sw2_projections": args.sw2_projections, "seed": args.seed,
    })
    if args.mcfm is None and args.baseline is None:
        raise UsageError("provide at least one of --mcfm/--baseline rollout directories")
    dataset = pendulum.load_dataset(args.data)
    truth_terminals = dataset.terminal_states("test")
    os.makedirs(args.out, exist_ok=True)

    loaded = {}
    if args.mcfm:
        loaded["mcfm"] = _load_rollouts(args.mcfm)
    if args.baseline:
        loaded["baseline"] = _load_rollouts(args.baseline)

    metrics = {"mcfm": None, "baseline": None, "comparison": None}
    per_traj = {}
    for name, records in loaded.items():
        agg, per = _metrics_block(records, truth_terminals, s)
        metrics[name] = agg
        per_traj[name] = per
    if metrics["mcfm"] and metrics["baseline"]:
        m, u = metrics["mcfm"], metrics["baseline"]
        metrics["comparison"] = {
            "increase_fraction_ordering": m["increase_fraction"] <= u["increase_fraction"],
            "sign_error_ordering": m["sign_error_fraction"] <= u["sign_error_fraction"],
            "sw2_gap": abs(m["sw2"] - u["sw2"]),
            "sw2_band": 0.5 * max(m["sw2"], u["sw2"]),
        }
    metrics["per_trajectory"] = per_traj
    _write_json(os.path.join(args.out, "metrics.json"), metrics)

    from . import figures  # deferred: pulls in matplotlib

    n_show = 6
    truth = dataset.test[:n_show]
    phase = {"truth": [t.states for t in truth]}
    energy = {}
    rates = {}
    truth_times = truth[0].times if truth else np.array([])
    tp = pendulum.PendulumParams(dataset.params.mass, dataset.params.gravity,
                                 dataset.params.length)
    truth_e, truth_r = [], []
    for t in truth:
        truth_e.append(pendulum.pendulum_energy(
            pendulum.PendulumParams(tp.mass, tp.gravity, tp.length, t.gamma), t.states))
        truth_r.append(np.array([
            float(pendulum.pendulum_energy_grad(tp, x) @ pendulum.pendulum_rhs(
                pendulum.PendulumParams(tp.mass, tp.gravity, tp.length, t.gamma), x))
            for x in t.states
        ]))
    energy["truth"] = (truth_times, truth_e)
    rates["truth"] = (truth_times, truth_r)
    for name, records in loaded.items():
        phase[name] = [r.states for r in records[:n_show]]
        energy[name] = (records[0].times, [r.energy for r in records[:n_show]])
        rates[name] = (records[0].times, [r.dedt for r in records[:n_show]])

    figures.save_phase_portrait(os.path.join(args.out, "phase_portrait.svg"), phase)
    figures.save_energy_ratio(os.path.join(args.out, "energy_ratio.svg"), energy)
    figures.save_energy_rate(os.path.join(args.out, "energy_rate.svg"), rates)
    figures.save_metric_bars(
        os.path.join(args.out, "metrics_bars.svg"),
        {k: v for k, v in metrics.items() if k in ("mcfm", "baseline") and v},
    )
    _write_provenance(args.out, "report", s)
    print(f"wrote metrics.json and 4 figures to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = _Parser(prog="metriflow",
                     description="Structure-preserving flow-matched pendulum surrogates.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gendata", help="generate the damped-pendulum dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--train", type=int)
    p.add_argument("--test", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--gamma-min", dest="gamma_min", type=float)
    p.add_argument("--gamma-max", dest="gamma_max", type=float)
    p.set_defaults(fn=cmd_gendata)

    p = sub.add_parser("train", help="fit a field to transition pairs")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--model-kind", dest="model_kind", choices=_MODEL_KINDS)
    p.add_argument("--width", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--frequencies", type=int)
    p.add_argument("--h-mode", dest="h_mode", choices=("learned", "e_phys"))
    p.add_argument("--shrink", dest="shrink", action="store_true", default=None)
    p.add_argument("--no-shrink", dest="shrink", action="store_false", default=None)
    p.add_argument("--rank", type=int)
    p.add_argument("--lambda-soft", dest="lambda_soft", type=float)
    p.add_argument("--lambda-reg", dest="lambda_reg", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr-max", dest="lr_max", type=float)
    p.add_argument("--lr-min", dest="lr_min", type=float)
    p.add_argument("--clip-norm", dest="clip_norm", type=float)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("rollout", help="integrate a checkpoint from test initial states")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--x0", help="single initial state 'q,p' instead of the test set")
    p.add_argument("--h", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--sampler", choices=("auto", "rk4", "strang-prox"))
    p.add_argument("--projection", choices=("off", "on"))
    p.add_argument("--projection-eps", dest="projection_eps", type=float)
    p.add_argument("--prox-mode", dest="prox_mode",
                   choices=(integrators.PROX_CLOSED_FORM, integrators.PROX_IMPLICIT))
    p.add_argument("--limit", type=int)
    p.set_defaults(fn=cmd_rollout)

    p = sub.add_parser("verify", help="run the structural guarantee checks")
    p.add_argument("--checkpoint")
    p.add_argument("--analytic", action="store_true",
                   help="check the closed-form damped-pendulum field")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--points", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--h-grid", dest="h_grid")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("report", help="metrics and figures from rollout CSVs")
    p.add_argument("--mcfm", help="rollout directory of the metriplectic model")
    p.add_argument("--baseline", help="rollout directory of the unconstrained model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--sw2-projections", dest="sw2_projections", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
