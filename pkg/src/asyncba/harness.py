"""Run configuration, seeded runner, sweeps, CSV/JSON output and test oracles."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .adversaries import make_adversary
from .agreement import RunReport, Simulation
from .blackboard import BlackboardHistory, BlackboardView
from .coinflip import clamp, coin_board
from .core import ParamError, ProtocolParams, derive_params
from .fraud import ExcessGraph, FractionalMatching, make_graph, rising_tide

CSV_COLUMNS = ["seed", "n", "f", "epsilon", "m", "T", "c", "adversary", "decidedValue", "epochsUsed",
               "iterationsUsed", "restarts", "latencyTime", "latencyRows", "minInvariant1Margin",
               "zeroWeightGood", "zeroWeightBad"]
STATUS_COLUMN = "status"
EPOCH_COLUMNS = ["seed", "adversary", "restart", "epoch", "deductionsGood", "deductionsBad",
                 "invariant1Margin", "zeroWeightGood", "zeroWeightBad", "maxGoodExcess",
                 "badIncidentCapacity"]


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text) -> Optional[tuple]:
    if text is None or isinstance(text, tuple):
        return text
    text = str(text).strip()
    if text in ("", "none"):
        return None
    return tuple(int(x) for x in text.split(","))


def _inputs(text) -> Optional[str]:
    if text is None:
        return None
    text = str(text).strip()
    if text in ("random", "unanimous+", "unanimous-", "alternating") or all(
            x.strip() in ("1", "-1", "+1") for x in text.split(",")):
        return text
    raise ValueError(f"unrecognized inputs {text!r}")


def _transport(text) -> str:
    if text not in ("direct", "bracha"):
        raise ValueError(f"transport must be direct or bracha, got {text!r}")
    return text


# config key -> (attribute, parser)
KEYS = {
    "f": ("f", int),
    "epsilon": ("epsilon", float),
    "m": ("m", int),
    "T": ("T", int),
    "c": ("c", float),
    "adversary": ("adversary", str),
    "seed": ("seed", int),
    "maxRestarts": ("max_restarts", int),
    "transport": ("transport", _transport),
    "inputs": ("inputs", _inputs),
    "crashSet": ("crash_set", _ints),
    "targets": ("targets", _ints),
    "stallGood": ("stall_good", _bool),
    "maxIterations": ("max_iterations", int),
    "stopWhenDecided": ("stop_when_decided", _bool),
    "check": ("check", _bool),
    "csv": ("csv", str),
    "json": ("json", str),
    "epochCsv": ("epoch_csv", str),
    "trace": ("trace", str),
    "boardDump": ("board_dump", str),
}


@dataclass(frozen=True)
class RunConfig:
    f: int = 2
    epsilon: float = 0.5
    m: int = 16
    T: int = 32
    c: float = 2.0
    adversary: str = "fair"
    seed: int = 1
    max_restarts: int = 3
    transport: str = "direct"
    inputs: Optional[str] = None
    crash_set: Optional[tuple] = None
    targets: Optional[tuple] = None
    stall_good: bool = False
    max_iterations: Optional[int] = None
    stop_when_decided: bool = True
    check: bool = True
    csv: Optional[str] = None
    json: Optional[str] = None
    epoch_csv: Optional[str] = None
    trace: Optional[str] = None
    board_dump: Optional[str] = None

    def params(self) -> ProtocolParams:
        return derive_params(self.f, self.epsilon, self.m, self.T, self.c)

    def validated(self) -> "RunConfig":
        self.params()
        make_adversary(self.adversary, **self.adversary_params())
        return self

    def adversary_params(self) -> dict:
        out = {}
        if self.adversary == "crash" and self.crash_set is not None:
            out["crash_set"] = self.crash_set
        if self.adversary == "sigma-scheduling" and self.targets is not None:
            out["targets"] = self.targets
        if self.adversary in ("mirror-mimic", "sigma-scheduling"):
            out["stall_good"] = self.stall_good
        return out

    def input_vector(self, n: int) -> Optional[list]:
        spec = self.inputs  # random, unanimous+, unanimous-, alternating or a list
        if spec is None or spec == "random":
            return None
        if spec == "unanimous+":
            return [1] * n
        if spec == "unanimous-":
            return [-1] * n
        if spec == "alternating":
            return [1 if i % 2 == 0 else -1 for i in range(n)]
        vals = [int(x) for x in spec.split(",")]
        if len(vals) != n:
            raise ParamError(f"inputs list has {len(vals)} entries, need n={n}")
        return vals


def parse_config_text(text: str) -> dict:
    """Flat ``key=value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParamError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ParamError(f"line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def build_config(file_values: Optional[dict] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Merge file values with overrides (overrides win) into a validated config."""
    merged = dict(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    kwargs = {}
    for key, value in merged.items():
        if key not in KEYS:
            raise ParamError(f"unknown key {key!r}")
        attr, parse = KEYS[key]
        try:
            kwargs[attr] = parse(value) if isinstance(value, str) else value
        except ValueError as exc:
            raise ParamError(f"{key}: {exc}") from None
    return RunConfig(**kwargs).validated()


def load_config(path: str, overrides: Optional[dict] = None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return build_config(parse_config_text(fh.read()), overrides)


# -- running -----------------------------------------------------------------

def simulate(config: RunConfig, keep_records: bool = False) -> tuple[Simulation, RunReport]:
    params = config.params()
    trace = [] if config.trace else None
    sim = Simulation(params, make_adversary(config.adversary, **config.adversary_params()),
                     seed=config.seed, inputs=config.input_vector(params.n),
                     transport=config.transport, max_restarts=config.max_restarts,
                     stop_when_decided=config.stop_when_decided,
                     max_iterations=config.max_iterations, check=config.check, trace=trace,
                     keep_records=keep_records)
    return sim, sim.run()


def csv_row(config: RunConfig, report: RunReport, status: str = "ok") -> dict:
    p = report.params
    return {
        "seed": config.seed, "n": p.n, "f": p.f, "epsilon": f"{p.epsilon:.6g}", "m": p.m, "T": p.T,
        "c": f"{p.c:.6g}", "adversary": config.adversary,
        "decidedValue": "none" if report.decided_value is None else f"{report.decided_value:+d}",
        "epochsUsed": report.epochs_used, "iterationsUsed": report.iterations_used,
        "restarts": report.restarts, "latencyTime": f"{report.latency_time:g}",
        "latencyRows": report.latency_rows,
        "minInvariant1Margin": f"{report.min_invariant1_margin:.9g}",
        "zeroWeightGood": report.zero_weight(bad=False), "zeroWeightBad": report.zero_weight(bad=True),
        STATUS_COLUMN: status,
    }


def error_row(config: RunConfig, exc: BaseException) -> dict:
    row = {k: "" for k in CSV_COLUMNS}
    row.update(seed=config.seed, f=config.f, epsilon=f"{config.epsilon:.6g}", m=config.m, T=config.T,
               c=f"{config.c:.6g}", adversary=config.adversary)
    try:
        row["n"] = config.params().n
    except ParamError:
        pass
    row[STATUS_COLUMN] = f"{type(exc).__name__}: {exc}".replace("\n", " ")
    return row


def report_dict(config: RunConfig, report: RunReport) -> dict:
    p = report.params
    return {
        "config": {k: getattr(config, KEYS[k][0]) for k in KEYS},
        "params": {"n": p.n, "f": p.f, "epsilon": p.epsilon, "m": p.m, "m0": p.m0, "T": p.T, "c": p.c,
                   "xmax": p.xmax, "beta": p.beta, "wMin": p.w_min, "kMax": p.k_max},
        "decidedValue": report.decided_value,
        "decided": report.decided,
        "epochsUsed": report.epochs_used,
        "iterationsUsed": report.iterations_used,
        "restarts": report.restarts,
        "latencyTime": report.latency_time,
        "latencyRows": report.latency_rows,
        "invariant1MarginPerEpoch": list(report.invariant1_margins),
        "agreementOk": report.agreement_ok,
        "validityOk": report.validity_ok,
        "weightTrajectory": [list(w) for w in report.weight_trajectory],
        "corrupt": list(report.corrupt),
        "inputs": list(report.inputs),
        "deliveries": report.deliveries,
        "stats": {k: (None if isinstance(v, float) and math.isnan(v) else v)
                  for k, v in sorted(report.stats.items())},
    }


def report_json(config: RunConfig, report: RunReport) -> str:
    return json.dumps(report_dict(config, report), indent=2, sort_keys=True) + "\n"


def epoch_rows(config: RunConfig, report: RunReport) -> list[dict]:
    rows = []
    for ep in report.epochs:
        row = {"seed": config.seed, "adversary": config.adversary}
        row.update(ep.csv_fields())
        rows.append(row)
    return rows


def write_csv(path_or_buf, rows: Sequence[dict], columns: Sequence[str], append: bool = False) -> None:
    if isinstance(path_or_buf, io.TextIOBase):
        writer = csv.DictWriter(path_or_buf, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        return
    exists = append and os.path.exists(path_or_buf) and os.path.getsize(path_or_buf) > 0
    with open(path_or_buf, "a" if append else "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        if not exists:
            writer.writeheader()
        writer.writerows(rows)


def run(config: RunConfig) -> RunReport:
    """Execute one configured run and write whichever outputs the config names."""
    sim, report = simulate(config)
    if config.csv:
        write_csv(config.csv, [csv_row(config, report)], CSV_COLUMNS + [STATUS_COLUMN], append=True)
    if config.json:
        with open(config.json, "w", encoding="utf-8") as fh:
            fh.write(report_json(config, report))
    if config.epoch_csv:
        write_csv(config.epoch_csv, epoch_rows(config, report), EPOCH_COLUMNS, append=True)
    if config.trace:
        with open(config.trace, "w", encoding="utf-8") as fh:
            fh.write("\n".join(sim.net.trace) + ("\n" if sim.net.trace else ""))
    if config.board_dump:
        with open(config.board_dump, "w", encoding="utf-8") as fh:
            fh.write(sim.history.dump(range(1, len(sim.history) + 1)))
    return report


def _sweep_one(config: RunConfig) -> tuple[dict, list]:
    try:
        _, report = simulate(config)
    except Exception as exc:  # recorded per row; the caller decides the exit status
        return error_row(config, exc), []
    return csv_row(config, report), epoch_rows(config, report)


def sweep(configs: Iterable[RunConfig], parallelism: int = 1) -> tuple[list[dict], list[dict]]:
    """Run every config; rows come back sorted by (adversary, seed) whatever the completion order."""
    configs = list(configs)
    if parallelism > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(_sweep_one, configs))
    else:
        results = [_sweep_one(c) for c in configs]
    rows = [r for r, _ in results]
    epochs = [e for _, es in results for e in es]

    def key(row):
        return (str(row["adversary"]), int(row["seed"]), str(row.get("n", "")), str(row.get("m", "")),
                str(row.get("T", "")))

    rows.sort(key=key)
    epochs.sort(key=lambda r: (r["adversary"], int(r["seed"]), int(r["restart"]), int(r["epoch"])))
    return rows, epochs


def grid(base: RunConfig, seeds: Iterable[int], adversaries: Iterable[str]) -> list[RunConfig]:
    return [replace(base, seed=s, adversary=a) for a in adversaries for s in seeds]


def aggregate(rows: Sequence[dict]) -> dict:
    """Per-adversary decision rate, mean epochs and worst invariant margin."""
    out: dict = {}
    for row in rows:
        a = out.setdefault(row["adversary"], {"runs": 0, "decided": 0, "errors": 0, "epochs": 0,
                                              "minMargin": math.inf})
        a["runs"] += 1
        if row[STATUS_COLUMN] != "ok":
            a["errors"] += 1
            continue
        a["decided"] += row["decidedValue"] != "none"
        a["epochs"] += int(row["epochsUsed"])
        a["minMargin"] = min(a["minMargin"], float(row["minInvariant1Margin"]))
    for a in out.values():
        ok = a["runs"] - a["errors"]
        a["decisionRate"] = a["decided"] / ok if ok else math.nan
        a["meanEpochs"] = a["epochs"] / ok if ok else math.nan
    return out


# -- random graphs for the matching checks -----------------------------------

def random_graph(rng, n: int, zero_prob: float = 0.3) -> ExcessGraph:
    cap_v = rng.uniform(0, 2, n)
    cap_e = rng.uniform(0, 2, (n, n)) * (rng.random((n, n)) >= zero_prob)
    return make_graph(cap_v, cap_e)


def random_perturbation(rng, n: int):
    g = random_graph(rng, n)
    dv = rng.uniform(-0.5, 0.5, n) * (rng.random(n) < 0.5)
    de = rng.uniform(-0.5, 0.5, (n, n)) * (rng.random((n, n)) < 0.3)
    h = make_graph(np.maximum(g.cap_v + dv, 0), np.maximum(np.triu(g.cap_e, 1) + np.triu(de, 1), 0))
    eta_v = float(np.abs(h.cap_v - g.cap_v).sum())
    eta_e = float(np.abs(np.triu(h.cap_e, 1) - np.triu(g.cap_e, 1)).sum())
    return g, h, eta_v, eta_e


def lipschitz_lhs(g: ExcessGraph, h: ExcessGraph) -> float:
    rg = rising_tide(g).residual(g)
    rh = rising_tide(h).residual(h)
    return float(np.abs(rg - rh).sum())


# -- oracles -----------------------------------------------------------------

def oracle_rising_tide(graph: ExcessGraph, step_fraction: float = 1e-5) -> FractionalMatching:
    """Lockstep growth in fixed small steps, freezing an edge once one more step
    would overflow it or one of its endpoints."""
    cap_v = np.asarray(graph.cap_v, dtype=float)
    cap_e = np.asarray(graph.cap_e, dtype=float)
    n = len(cap_v)
    caps = [c for c in list(cap_v) + [cap_e[i, j] for i in range(n) for j in range(i + 1, n)] if c > 0]
    if not caps:
        return FractionalMatching(np.zeros((n, n)))
    step = step_fraction * min(caps)
    ii, jj = np.triu_indices(n, 1)
    ecap = cap_e[ii, jj].copy()
    mu = _small_steps(cap_v.copy(), ecap, ii.astype(np.int64), jj.astype(np.int64), step)
    out = np.zeros((n, n))
    out[ii, jj] = mu
    out[jj, ii] = mu
    return FractionalMatching(out)


def _small_steps_py(cap_v, ecap, ii, jj, step):
    n = len(cap_v)
    ne = len(ecap)
    mu = np.zeros(ne)
    load = np.zeros(n)
    active = np.zeros(ne, dtype=np.bool_)
    for e in range(ne):
        active[e] = ecap[e] > 0 and cap_v[ii[e]] > 0 and cap_v[jj[e]] > 0
    deg = np.zeros(n, dtype=np.int64)
    while True:
        deg[:] = 0
        for e in range(ne):
            if active[e]:
                deg[ii[e]] += 1
                deg[jj[e]] += 1
        changed = True
        while changed:  # freeze anything that cannot take one more step
            changed = False
            for e in range(ne):
                if active[e]:
                    a, b = ii[e], jj[e]
                    if (mu[e] + step > ecap[e] or load[a] + step * deg[a] > cap_v[a]
                            or load[b] + step * deg[b] > cap_v[b]):
                        active[e] = False
                        deg[a] -= 1
                        deg[b] -= 1
                        changed = True
        any_active = False
        for e in range(ne):
            if active[e]:
                any_active = True
                mu[e] += step
                load[ii[e]] += step
                load[jj[e]] += step
        if not any_active:
            return mu


try:  # the oracle is a tight loop; compile it when numba is present
    from numba import njit

    _small_steps = njit(cache=False)(_small_steps_py)
except ImportError:  # pragma: no cover
    _small_steps = _small_steps_py


def oracle_correlations(history: BlackboardHistory, iterations: Iterable[int], weights: Sequence[float],
                        xmax: int, view: Optional[BlackboardView] = None) -> tuple[list, list]:
    """Recompute ``(counts, corr)`` cell by cell from raw boards (or a view).

    ``counts[i][j]`` is the exact integer ``sum_t X_i(t) X_j(t)``; ``corr`` applies
    the weights. Diagonals are zero.
    """
    n = history.n
    counts = [[0] * n for _ in range(n)]
    for t in iterations:
        b = coin_board(t)
        board = history.boards[b - 1]
        xs = []
        for i in range(n):
            s = 0
            for r in range(board.rows):
                if view is not None:
                    v = view.cell(b, r, i)
                else:
                    col = board.columns[i]
                    v = col[r] if r < len(col) else None
                s += 0 if v is None else v
            xs.append(clamp(s, xmax))
        for i in range(n):
            for j in range(n):
                if i != j:
                    counts[i][j] += xs[i] * xs[j]
    corr = [[weights[i] * weights[j] * counts[i][j] if i != j else 0.0 for j in range(n)] for i in range(n)]
    return counts, corr
