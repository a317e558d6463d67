"""Seeded sweeps over batch size, local epochs, client size and distortion.

For every sweep unit ``(B, E, n, trial)`` the runner trains FedAvg on fresh
synthetic data, picks a representative batch of the attacked client,
analyses the update Jacobian of that batch, estimates the bi-Lipschitz
constants, and then, once per distortion magnitude, distorts the shared
update, runs the reconstruction attack and evaluates leakage against the
bound for every configured ``poly(B)``.

Output files (all CSV values are ``repr`` floats, so two runs with the same
config and seed are byte-identical):

``bound_sweep.csv``
    ``B, poly_choice, delta_k, bound, eps_p, precondition_ok`` followed by
    ``E, n, distortion, trial, c_a, c_b, c_0, c_2, D, tail_probability, status``.
``jacobian.csv``
    ``d, B, p, rank, kernel_dim, update_gap`` then ``E, n, trial, sufficient, status``.
``attack_trace.csv``
    ``round, objective, mismatch, mean_matched_distance`` then
    ``B, E, n, distortion, trial`` (every ``trace_stride``-th round plus the last).
``results.jsonl``
    one :class:`ResultRecord` per (point, trial), including wall-clock runtime.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..attack import reconstruct
from ..fedcore import run_training
from ..jacobian import (
    check_sufficient_condition,
    construct_collision,
    single_batch_update,
    update_jacobian_fd,
)
from ..privacy import (
    BoundInputs,
    apply_distortion,
    data_diameter,
    distortion_extent,
    estimate_lipschitz_constants,
    estimate_regret_constants,
    leakage_upper_bound,
    matched_distances,
    privacy_leakage,
)
from .config import ExperimentConfig
from .data import generate_synthetic_data, load_csv_clients
from .seeding import derive_rng, derive_seed

log = logging.getLogger(__name__)

BOUND_COLUMNS = [
    "B", "poly_choice", "delta_k", "bound", "eps_p", "precondition_ok",
    "E", "n", "distortion", "trial", "c_a", "c_b", "c_0", "c_2", "D",
    "tail_probability", "status",
]
JACOBIAN_COLUMNS = [
    "d", "B", "p", "rank", "kernel_dim", "update_gap",
    "E", "n", "trial", "sufficient", "status",
]
TRACE_COLUMNS = [
    "round", "objective", "mismatch", "mean_matched_distance",
    "B", "E", "n", "distortion", "trial",
]


@dataclass
class ResultRecord:
    experiment_id: str
    config_hash: str
    point: dict
    trial: int
    status: str = "ok"
    metrics: dict = field(default_factory=dict)
    bounds: list = field(default_factory=list)
    runtime: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, default=_jsonable)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(type(v))


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def sweep_points(cfg: ExperimentConfig) -> list[tuple[int, int, int]]:
    s = cfg["sweep"]
    Bs = s["batch_size"] or [cfg["train"]["batch_size"]]
    Es = s["local_epochs"] or [cfg["train"]["local_epochs"]]
    ns = s["n_per_client"] or [cfg["data"]["n_per_client"]]
    # n = 0 means "one batch per client"
    return [(B, E, n or B) for B, E, n in itertools.product(Bs, Es, ns)]


class SweepUnit:
    """Everything shared by the distortion magnitudes of one (B, E, n, trial)."""

    def __init__(self, cfg: ExperimentConfig, B: int, E: int, n: int, trial: int):
        self.cfg, self.B, self.E, self.n, self.trial = cfg, B, E, n, trial
        self.key = (B, E, n, trial)
        ms = cfg.master_seed
        spec = self.spec = cfg.model_spec
        if cfg["data"]["source"] == "csv":
            clients = load_csv_clients(cfg["data"]["csv_paths"])
        else:
            desc = cfg.synthetic(B, n)
            clients = generate_synthetic_data(desc, derive_seed(ms, "data", *self.key))
        self.train = cfg.train_config(B, E, seed=derive_seed(ms, "train", *self.key))
        if not self.train.lr > 0:
            raise ValueError("sweeps need a positive learning rate")
        trace = run_training(spec, clients, self.train)
        self.theta = trace.thetas[cfg["attack"]["attack_round"]]
        client = clients[cfg["attack"]["client"]]
        if client.n < B:
            raise ValueError(f"client has {client.n} samples, fewer than B={B}")
        idx = np.sort(derive_rng(ms, "batch", *self.key).choice(client.n, B, replace=False))
        self.X, self.y = client.X[idx], client.y[idx]
        update = single_batch_update(spec, self.theta, self.X, self.y, self.train.lr, E)
        self.g = -update / (self.train.lr * E)
        self.D = cfg["privacy"]["D"] or data_diameter(cfg.domain)

    def jacobian_row(self) -> dict:
        cfg, spec = self.cfg, self.spec
        d, p = spec.param_dim, spec.input_dim
        row = {"d": d, "B": self.B, "p": p, "E": self.E, "n": self.n, "trial": self.trial,
               "sufficient": check_sufficient_condition(d, self.B, p)}
        jc = cfg["jacobian"]
        try:
            jac = update_jacobian_fd(spec, self.X, self.y, self.theta, self.train,
                                     h=jc["fd_step"], tol=jc["tolerance"])
            gap = math.nan
            if jac.kernel_dim > 0:
                cert = construct_collision(
                    spec, self.X, self.y, self.theta, self.train, jc["collision_magnitude"],
                    derive_seed(cfg.master_seed, "collision", *self.key), jac=jac,
                )
                gap = cert.update_gap
            row.update(rank=jac.numerical_rank, kernel_dim=jac.kernel_dim, update_gap=gap, status="ok")
        except Exception as exc:  # recorded, sweep continues
            row.update(rank=-1, kernel_dim=-1, update_gap=math.nan, status=f"error: {exc}")
        return row

    def lipschitz(self):
        cfg = self.cfg
        return estimate_lipschitz_constants(
            self.spec, self.theta, cfg.domain, cfg["privacy"]["lipschitz_pairs"],
            derive_seed(cfg.master_seed, "lipschitz", *self.key),
        )

    def attack(self, magnitude: float, lip):
        cfg, ms = self.cfg, self.cfg.master_seed
        g_t = apply_distortion(self.g, magnitude, derive_seed(ms, "distort", *self.key, magnitude))
        shared = -self.train.lr * self.E * g_t
        atk = cfg.attack_config(derive_seed(ms, "attack", *self.key, magnitude))
        trace = reconstruct(self.spec, self.theta, shared, self.y, self.train, atk)
        if trace.rounds == 0:
            raise RuntimeError("attack diverged before its first round")
        eps = privacy_leakage([trace], [self.X], self.D)
        c_0, c_2 = estimate_regret_constants(trace)
        delta_k = distortion_extent(self.g, g_t)
        bounds = []
        for poly in cfg.poly_choices:
            inputs = BoundInputs(B=self.B, delta_k=delta_k, c_a=lip.c_a, c_b=lip.c_b,
                                 c_0=c_0, c_2=c_2, E=self.E, T=atk.rounds, D=self.D, poly_B=poly)
            res = leakage_upper_bound(inputs)
            bounds.append({"poly_choice": poly.label, "bound": res.bound,
                           "tail_probability": res.tail_probability,
                           "precondition_ok": res.precondition_ok})
        metrics = {"eps_p": eps, "delta_k": delta_k, "c_a": lip.c_a, "c_b": lip.c_b,
                   "c_0": c_0, "c_2": c_2, "D": self.D, "diverged": trace.diverged,
                   "final_objective": float(trace.objective[-1])}
        return trace, metrics, bounds


def run_sweep(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> list[ResultRecord]:
    out = Path(out_dir) if out_dir is not None else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    chash = cfg.config_hash()
    magnitudes = [float(m) for m in cfg["privacy"]["distortion"]]
    stride = cfg["output"]["trace_stride"]
    spec = cfg.model_spec

    records: list[ResultRecord] = []
    bound_rows, jac_rows, trace_rows = [], [], []
    for B, E, n in sweep_points(cfg):
        for trial in range(cfg["privacy"]["trials"]):
            t_unit = time.perf_counter()
            try:
                unit = SweepUnit(cfg, B, E, n, trial)
                lip = unit.lipschitz()
                jac_rows.append(unit.jacobian_row())
                unit_err = None
            except Exception as exc:
                log.warning("sweep unit B=%s E=%s n=%s trial=%s failed: %s", B, E, n, trial, exc)
                unit_err = f"error: {exc}"
                jac_rows.append({"d": spec.param_dim, "B": B, "p": spec.input_dim, "rank": -1,
                                 "kernel_dim": -1, "update_gap": math.nan, "E": E, "n": n,
                                 "trial": trial, "sufficient": check_sufficient_condition(
                                     spec.param_dim, B, spec.input_dim), "status": unit_err})
            setup_time = time.perf_counter() - t_unit
            for mag in magnitudes:
                t0 = time.perf_counter()
                point = {"B": B, "E": E, "n": n, "distortion": mag}
                rec = ResultRecord(f"B{B}-E{E}-n{n}-m{mag:g}-r{trial}", chash, point, trial)
                try:
                    if unit_err:
                        raise RuntimeError(unit_err)
                    trace, metrics, bounds = unit.attack(mag, lip)
                    jr = jac_rows[-1]
                    metrics.update(d=jr["d"], p=jr["p"], rank=jr["rank"],
                                   kernel_dim=jr["kernel_dim"], update_gap=jr["update_gap"])
                    rec.metrics, rec.bounds = metrics, bounds
                    dists = matched_distances(trace.batches, unit.X, unit.D).mean(axis=1) * unit.D
                    for t in range(trace.rounds):
                        if (t + 1) % stride == 0 or t == trace.rounds - 1:
                            trace_rows.append({
                                "round": t + 1, "objective": trace.objective[t],
                                "mismatch": trace.mismatch[t], "mean_matched_distance": dists[t],
                                "B": B, "E": E, "n": n, "distortion": mag, "trial": trial,
                            })
                except Exception as exc:
                    log.warning("sweep point %s trial %s failed: %s", point, trial, exc)
                    rec.status = str(exc) if str(exc).startswith("error") else f"error: {exc}"
                rec.runtime = time.perf_counter() - t0 + setup_time / max(len(magnitudes), 1)
                records.append(rec)
                bound_rows.extend(_bound_rows(rec))

    _write_csv(out / "bound_sweep.csv", BOUND_COLUMNS, bound_rows)
    _write_csv(out / "jacobian.csv", JACOBIAN_COLUMNS, jac_rows)
    _write_csv(out / "attack_trace.csv", TRACE_COLUMNS, trace_rows)
    with open(out / "results.jsonl", "w") as f:
        for rec in records:
            f.write(rec.to_json() + "\n")
    with open(out / "summary.json", "w") as f:
        json.dump(summarize(records), f, indent=2, sort_keys=True)
        f.write("\n")
    return records


def bound_violations(records: list[ResultRecord]) -> list[tuple[ResultRecord, dict]]:
    """(record, bound row) pairs where the precondition holds but eps_p exceeds the bound."""
    out = []
    for rec in records:
        for b in rec.bounds:
            if b["precondition_ok"] and rec.metrics["eps_p"] > b["bound"]:
                out.append((rec, b))
    return out


def summarize(records: list[ResultRecord]) -> dict:
    """Aggregate view per batch size; contains no timings, so it is reproducible."""
    by_B: dict[int, list[ResultRecord]] = {}
    for rec in records:
        by_B.setdefault(rec.point["B"], []).append(rec)
    per_B = {}
    for B, recs in sorted(by_B.items()):
        ok = [r for r in recs if r.status == "ok"]
        eps = [r.metrics["eps_p"] for r in ok]
        bounds = [b["bound"] for r in ok for b in r.bounds]
        per_B[str(B)] = {
            "records": len(recs),
            "failed": len(recs) - len(ok),
            "mean_eps_p": float(np.mean(eps)) if eps else None,
            "min_bound": float(min(bounds)) if bounds else None,
            "precondition_ok": sum(b["precondition_ok"] for r in ok for b in r.bounds),
        }
    return {
        "config_hash": records[0].config_hash if records else None,
        "records": len(records),
        "failed": sum(r.status != "ok" for r in records),
        "bound_violations": len(bound_violations(records)),
        "per_batch_size": per_B,
    }


def _bound_rows(rec: ResultRecord) -> list[dict]:
    base = {"B": rec.point["B"], "E": rec.point["E"], "n": rec.point["n"],
            "distortion": rec.point["distortion"], "trial": rec.trial, "status": rec.status}
    m = rec.metrics
    if rec.status != "ok":
        return [dict(base, poly_choice="", delta_k=math.nan, bound=math.nan, eps_p=math.nan,
                     precondition_ok=False, c_a=math.nan, c_b=math.nan, c_0=math.nan,
                     c_2=math.nan, D=math.nan, tail_probability=math.nan)]
    rows = []
    for b in rec.bounds:
        rows.append(dict(base, poly_choice=b["poly_choice"], delta_k=m["delta_k"],
                         bound=b["bound"], eps_p=m["eps_p"], precondition_ok=b["precondition_ok"],
                         c_a=m["c_a"], c_b=m["c_b"], c_0=m["c_0"], c_2=m["c_2"], D=m["D"],
                         tail_probability=b["tail_probability"]))
    return rows


def _write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])
