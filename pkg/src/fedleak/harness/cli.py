"""Command line entry point: ``fedleak <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .. import kernels
from ..attack import match_samples, write_trace_csv
from ..fedcore import global_loss, run_training
from ..jacobian import check_sufficient_condition, construct_collision, update_jacobian_fd, write_jacobian_csv
from ..models import save_params_csv
from ..privacy import BoundInputs, PolyB, bound_threshold, leakage_upper_bound
from .config import ExperimentConfig
from .data import generate_synthetic_data, load_csv_clients
from .seeding import derive_seed
from .sweep import SweepUnit, bound_violations, run_sweep

log = logging.getLogger("fedleak")

# flag name -> dotted config key
_FLAG_KEYS = {
    "kind": "model.kind",
    "input_dim": "model.input_dim",
    "hidden_dim": "model.hidden_dim",
    "output_dim": "model.output_dim",
    "batch_size": "train.batch_size",
    "epochs": "train.local_epochs",
    "lr": "train.lr",
    "clients": "train.num_clients",
    "rounds": "train.rounds",
    "attack_rounds": "attack.rounds",
    "trials": "privacy.trials",
}


class CLIError(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML experiment config")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. --set attack.step_size=0.01")
    p.add_argument("--kind", choices=["linear-regression", "logistic-regression", "mlp1"])
    p.add_argument("--input-dim", type=int)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--output-dim", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int, help="local epochs E")
    p.add_argument("--lr", type=float)
    p.add_argument("--clients", type=int)
    p.add_argument("--rounds", type=int, help="FedAvg rounds")
    p.add_argument("--attack-rounds", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedleak",
        description="Federated learning leakage experiments: training, update Jacobians, "
        "reconstruction attacks and leakage bounds.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("simulate", help="run FedAvg and write the training trace")
    _common(p)

    p = sub.add_parser("jacobian", help="update Jacobian rank and a collision certificate")
    _common(p)

    p = sub.add_parser("attack", help="reconstruct one batch from its shared update")
    _common(p)
    p.add_argument("--distortion", type=float, default=0.0, help="distortion magnitude")

    p = sub.add_parser("bound", help="evaluate the leakage upper bound from constants")
    p.add_argument("--B", type=int, required=True, help="batch size")
    p.add_argument("--delta", type=float, required=True, help="distortion extent")
    p.add_argument("--c-a", type=float, required=True)
    p.add_argument("--D", type=float, required=True, help="data diameter")
    p.add_argument("--c-b", type=float, help="defaults to c_a")
    p.add_argument("--c-0", type=float, default=0.0)
    p.add_argument("--c-2", type=float, default=0.0)
    p.add_argument("--E", type=int, default=1)
    p.add_argument("--T", type=int, default=1, help="attacker rounds")
    p.add_argument("--poly", default="ln", help="'ln' or '<coef>*B^<exp>'")
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("estimate-constants", help="estimate c_a, c_b, D and attack regret constants")
    _common(p)

    p = sub.add_parser("sweep", help="run the configured sweep and write result tables")
    _common(p)
    return parser


def _load_config(args) -> ExperimentConfig:
    overrides = list(args.set)
    for flag, key in _FLAG_KEYS.items():
        v = getattr(args, flag, None)
        if v is not None:
            overrides.append(f"{key}={json.dumps(v)}")
    if args.seed is not None:
        overrides.append(f"master_seed={args.seed}")
    if args.out is not None:
        overrides.append(f"output_dir={json.dumps(args.out)}")
    if args.config is not None and not Path(args.config).is_file():
        raise CLIError(f"cannot read config {args.config!r}")
    return ExperimentConfig.load(args.config, overrides)


def _unit(cfg: ExperimentConfig) -> SweepUnit:
    t = cfg["train"]
    return SweepUnit(cfg, t["batch_size"], t["local_epochs"], cfg["data"]["n_per_client"] or t["batch_size"], 0)


def cmd_simulate(cfg: ExperimentConfig) -> None:
    spec = cfg.model_spec
    B = cfg["train"]["batch_size"]
    if cfg["data"]["source"] == "csv":
        clients = load_csv_clients(cfg["data"]["csv_paths"])
    else:
        clients = generate_synthetic_data(cfg.synthetic(B), derive_seed(cfg.master_seed, "data"))
    trace = run_training(spec, clients, cfg.train_config())
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "updates.jsonl", "w") as f:
        for rec in trace.records():
            f.write(json.dumps(rec) + "\n")
    save_params_csv(out / "theta_final.csv", trace.thetas[-1])
    for t, theta in enumerate(trace.thetas):
        print(f"round {t}: global loss {global_loss(spec, clients, theta):.6g}")
    print(f"wrote {out / 'updates.jsonl'} and {out / 'theta_final.csv'}")


def cmd_jacobian(cfg: ExperimentConfig) -> None:
    spec = cfg.model_spec
    u = _unit(cfg)
    d, B, p = spec.param_dim, u.B, spec.input_dim
    ok = check_sufficient_condition(d, B, p)
    rel = "<" if d < B * p else ">="
    print(f"sufficient condition: {str(ok).lower()} ({d} {rel} {B * p})")
    jc = cfg["jacobian"]
    jac = update_jacobian_fd(spec, u.X, u.y, u.theta, u.train, h=jc["fd_step"], tol=jc["tolerance"])
    print(f"d={d} B={B} p={p} rank={jac.numerical_rank} kernel_dim={jac.kernel_dim}")
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    write_jacobian_csv(out / "jacobian_matrix.csv", jac)
    if jac.kernel_dim > 0:
        cert = construct_collision(spec, u.X, u.y, u.theta, u.train, jc["collision_magnitude"],
                                   derive_seed(cfg.master_seed, "collision"), jac=jac)
        print(f"collision: |dx|={cert.delta_x_norm:.3g} update_gap={cert.update_gap:.3g} "
              f"relative_gap={cert.relative_gap:.3g}")
        with open(out / "collision.json", "w") as f:
            json.dump(cert.to_record(), f, indent=2)


def _attack(cfg: ExperimentConfig, distortion: float):
    u = _unit(cfg)
    lip = u.lipschitz()
    trace, metrics, bounds = u.attack(distortion, lip)
    return u, trace, metrics, bounds


def cmd_attack(cfg: ExperimentConfig, distortion: float) -> None:
    u, trace, metrics, bounds = _attack(cfg, distortion)
    perm, _ = match_samples(trace.final_batch, u.X)
    R = trace.final_batch[perm]
    rel = np.linalg.norm(R - u.X) / np.linalg.norm(u.X)
    print(f"rounds={trace.rounds} final objective={trace.objective[-1]:.3e} diverged={trace.diverged}")
    print(f"matched relative error={rel:.3e} eps_p={metrics['eps_p']:.6f}")
    for b in bounds:
        print(f"bound[{b['poly_choice']}]={b['bound']:.6f} precondition_ok={str(b['precondition_ok']).lower()}")
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(out / "attack_trace.csv", trace, u.X, u.D)
    print(f"wrote {out / 'attack_trace.csv'}")


def cmd_bound(args) -> None:
    inputs = BoundInputs(
        B=args.B, delta_k=args.delta, c_a=args.c_a, c_b=args.c_b if args.c_b is not None else args.c_a,
        c_0=args.c_0, c_2=args.c_2, E=args.E, T=args.T, D=args.D, poly_B=PolyB.parse(args.poly),
    )
    res = leakage_upper_bound(inputs)
    print(f"bound: {res.bound:.6g}")
    print(f"tail probability: {res.tail_probability:.6g}")
    print(f"precondition: {str(res.precondition_ok).lower()} "
          f"(delta {inputs.delta_k:.6g} vs threshold {bound_threshold(inputs):.6g})")


def cmd_estimate_constants(cfg: ExperimentConfig) -> None:
    u, trace, metrics, _ = _attack(cfg, 0.0)
    print(f"c_a={metrics['c_a']:.6g} c_b={metrics['c_b']:.6g} D={metrics['D']:.6g}")
    print(f"c_0={metrics['c_0']:.6g} c_2={metrics['c_2']:.6g} (attack rounds {trace.rounds})")


def cmd_sweep(cfg: ExperimentConfig) -> None:
    records = run_sweep(cfg)
    failed = sum(r.status != "ok" for r in records)
    viol = bound_violations(records)
    print(f"{len(records)} records ({failed} failed), {len(viol)} bound violations; "
          f"wrote {cfg.output_dir}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else argv
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.info("kernel backend: %s", kernels.BACKEND)
    try:
        if args.command == "bound":
            cmd_bound(args)
            return 0
        cfg = _load_config(args)
        if args.command == "simulate":
            cmd_simulate(cfg)
        elif args.command == "jacobian":
            cmd_jacobian(cfg)
        elif args.command == "attack":
            cmd_attack(cfg, args.distortion)
        elif args.command == "estimate-constants":
            cmd_estimate_constants(cfg)
        elif args.command == "sweep":
            cmd_sweep(cfg)
    except Exception as exc:
        print(f"fedleak {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
