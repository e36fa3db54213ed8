"""Seeded Monte Carlo experiments: configuration, trial runners, summaries, output.

Trial ``i`` of an experiment draws everything from ``derive(seed, kind, i)``,
so results do not depend on execution order.  Records are emitted in trial
order and floats are written at 12 significant digits, which makes repeated
runs byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import countsketch, dyadic, instances, lookahead, lowerbounds, regret
from .rng import derive, derive_int

KINDS = ("bai", "sparse-bai", "regret", "lemma1", "orthogonality", "lb-error", "lb-claim4",
         "sd-demo", "sparsity", "sketch-bench")
FORMATS = ("csv", "json")
CONFIG_KEYS = ("kind", "instance", "params", "trials", "seed", "out", "format", "max_failure_rate")

DEFAULT_INSTANCES = {
    "bai": {"name": "polarized", "params": {"K": 16, "T": 4096, "r": 2}},
    "sparse-bai": {"name": "polarized", "params": {"K": 16, "T": 4096, "r": 2}},
    "regret": {"name": "switching", "params": {"K": 10, "T": 30000}},
}

DEFAULT_PARAMS: dict[str, dict[str, Any]] = {
    "bai": {"lo": None, "hi": None},
    "sparse-bai": {"lo": None, "hi": None, "phi": None, "eps": None, "delta_cs": None, "delta": 0.1},
    "regret": {"learner": "hedge", "Q": None, "s": None, "epoch_len": 10, "complement": False,
               "fresh_instance": True},
    "lemma1": {"T": 1024, "lo": 3, "hi": 9},
    "orthogonality": {"M": 6},
    "lb-error": {"M": 16, "shared": False},
    "lb-claim4": {"d_max": 64},
    "sd-demo": {"n": 8, "A": [1, 2, 3], "B": [3, 4], "c": 2, "lam": "2/5", "T": 16384},
    "sparsity": {"K": 64, "T": 65536, "r": 1, "w": 256},
    "sketch-bench": {"k": 500, "r": 2, "heavy": 100, "light": 1, "eps": 0.3, "delta": 0.1},
}

# column order of the per-trial records; "trial" and "status" come first in every kind
SCHEMAS = {
    "bai": ["m", "b", "t0", "w", "arm", "best_avg", "chosen_avg", "error", "queries", "bits"],
    "sparse-bai": ["m", "b", "t0", "w", "arm", "best_avg", "chosen_avg", "error", "queries",
                   "sketch_updates", "bits", "seed_bits"],
    "regret": ["seed", "learner", "K", "T", "Q", "s", "regret", "exploration_rounds", "algorithm_loss",
               "best_arm_loss", "learner_bits", "bits"],
    "lemma1": ["T", "lo", "hi", "gap", "bound", "within_bound"],
    "orthogonality": ["M", "pairs", "max_abs_diff"],
    "lb-error": ["M", "m", "b", "chosen", "error", "bound"],
    "lb-claim4": ["d", "value", "value_exact", "equal_parents", "bound", "holds"],
    "sd-demo": ["tau", "t0", "hit", "arm", "says_intersect", "correct", "answer_correct", "margin"],
    "sparsity": ["K", "T", "r", "w", "phi", "bound", "within_bound", "worst_window_start"],
    "sketch-bench": ["k", "n1", "returned", "returned_count", "success", "depth", "width", "bits",
                     "bits_formula", "bits_match"],
}

# numeric columns summarized per kind
METRICS = {
    "bai": ["error", "bits"],
    "sparse-bai": ["error", "bits"],
    "regret": ["regret", "exploration_rounds", "learner_bits"],
    "lemma1": ["gap", "within_bound"],
    "orthogonality": ["max_abs_diff"],
    "lb-error": ["error"],
    "lb-claim4": ["value", "holds"],
    "sd-demo": ["hit", "answer_correct"],
    "sparsity": ["phi", "within_bound"],
    "sketch-bench": ["success", "bits_match"],
}


class ConfigError(ValueError):
    pass


class ExperimentError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    kind: str
    instance: dict[str, Any] | None = None
    params: dict[str, Any] = field(default_factory=dict)
    trials: int = 100
    seed: int = 0
    out: str | None = None
    format: str = "csv"
    max_failure_rate: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; choose from {', '.join(KINDS)}")
        if not isinstance(self.trials, int) or self.trials < 0:
            raise ConfigError(f"trials must be a non-negative integer, got {self.trials!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}, got {self.format!r}")
        if not 0.0 <= self.max_failure_rate <= 1.0:
            raise ConfigError("max_failure_rate must lie in [0, 1]")
        allowed = DEFAULT_PARAMS[self.kind]
        unknown = sorted(set(self.params) - set(allowed))
        if unknown:
            raise ConfigError(f"unknown {self.kind} parameter(s): {', '.join(unknown)}")
        if self.instance is not None:
            if self.kind not in DEFAULT_INSTANCES:
                raise ConfigError(f"{self.kind} does not take an instance")
            if not isinstance(self.instance, dict) or not ({"name", "path"} & set(self.instance)):
                raise ConfigError("instance must be a mapping with 'name' (generator) or 'path'")
            extra = sorted(set(self.instance) - {"name", "params", "seed", "path"})
            if extra:
                raise ConfigError(f"unknown instance key(s): {', '.join(extra)}")

    @property
    def resolved_params(self) -> dict[str, Any]:
        return {**DEFAULT_PARAMS[self.kind], **self.params}

    @property
    def resolved_instance(self) -> dict[str, Any] | None:
        if self.kind not in DEFAULT_INSTANCES:
            return None
        return self.instance if self.instance is not None else DEFAULT_INSTANCES[self.kind]


def load_config(path, **overrides) -> ExperimentConfig:
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = sorted(set(doc) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    doc.update({k: v for k, v in overrides.items() if v is not None})
    if "kind" not in doc:
        raise ConfigError("config needs a 'kind'")
    return ExperimentConfig(**doc)


# --------------------------------------------------------------------------
# summaries
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    std: float
    se: float
    count: int
    ci_low: float
    ci_high: float


def summarize(values) -> MetricSummary:
    """Mean, sample std, standard error and a normal 95% interval."""
    x = np.asarray(list(values), dtype=np.float64)
    if x.size == 0:
        raise ExperimentError("no successful trials: summary statistics are undefined")
    mean = math.fsum(x.tolist()) / x.size
    std = math.sqrt(math.fsum(((x - mean) ** 2).tolist()) / (x.size - 1)) if x.size > 1 else 0.0
    se = std / math.sqrt(x.size)
    return MetricSummary(mean, std, se, int(x.size), mean - 1.96 * se, mean + 1.96 * se)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[dict[str, Any]]
    summary: dict[str, MetricSummary]
    failures: int

    @property
    def successes(self) -> int:
        return len(self.records) - self.failures

    def require_summary(self) -> dict[str, MetricSummary]:
        if not self.summary:
            raise ExperimentError(f"summary refused: {self.successes} successful trial(s) out of "
                                  f"{len(self.records)}")
        return self.summary

    def ok_records(self) -> list[dict[str, Any]]:
        return [r for r in self.records if r["status"] == "ok"]

    def column(self, name: str) -> np.ndarray:
        return np.array([float(r[name]) for r in self.ok_records()])


# --------------------------------------------------------------------------
# trial runners
# --------------------------------------------------------------------------


def _build_instance(spec: dict[str, Any], seed: int) -> instances.BanditInstance:
    if "path" in spec:
        return instances.load_instance(spec["path"])
    return instances.generate(spec["name"], spec.get("params", {}), int(spec.get("seed", seed)))


def _score_row(inst, pred) -> dict[str, Any]:
    sc = lookahead.score(inst, pred)
    w = pred.window
    return {"m": w.m, "b": w.b, "t0": w.t0, "w": w.w, "arm": pred.arm, "best_avg": sc.best_arm_avg,
            "chosen_avg": sc.chosen_avg, "error": sc.error, "queries": pred.queries,
            "bits": pred.memory.total}


def _default_phi(inst, p) -> float:
    if p["phi"] is not None:
        return float(p["phi"])
    if inst.kind == "polarized":
        q = inst.spec["params"]
        return instances.claim1_bound(q["K"], q["T"], q["r"])
    raise ConfigError("sparse-bai needs 'phi' for non-polarized instances")


def polarized_stream(k: int, r: int, heavy: int, light: int, rng: np.random.Generator):
    """Shuffled unit-weight stream: ``r`` random items ``heavy`` times, the rest ``light`` times."""
    if not 1 <= r <= k:
        raise ConfigError(f"need 1 <= r <= k, got r={r}, k={k}")
    counts = np.full(k, light, dtype=np.int64)
    heavy_items = rng.choice(k, size=r, replace=False)
    counts[heavy_items] = heavy
    stream = np.repeat(np.arange(k), counts)
    rng.shuffle(stream)
    return stream, counts


def stream_sparsity(counts: np.ndarray) -> float:
    c = counts.astype(np.float64)
    return float((c**2).sum() / c.max() ** 2)


class _Runner:
    """Per-kind setup (shared across trials) and a trial function."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.p = cfg.resolved_params
        self.inst = None
        spec = cfg.resolved_instance
        if spec is not None and not (cfg.kind == "regret" and self.p["fresh_instance"]):
            self.inst = _build_instance(spec, cfg.seed)
        if cfg.kind == "sparse-bai":
            self.phi = _default_phi(self.inst, self.p)
        if cfg.kind == "lemma1":
            dyadic.resolve_scales(self.p["T"], self.p["lo"], self.p["hi"])
        if cfg.kind == "sd-demo":
            self.lam = Fraction(str(self.p["lam"]))
            lowerbounds.sd_window_length(self.p["T"], self.p["c"])
            instances.SDInstanceSpec(self.p["n"], self.p["A"], self.p["B"], 1, self.p["T"], self.lam)

    def rows(self) -> Callable[[int, np.random.Generator], dict[str, Any]]:
        return getattr(self, "_" + self.cfg.kind.replace("-", "_"))

    def _bai(self, i, rng):
        pred = lookahead.run_bai(self.inst, self.p["lo"], self.p["hi"], rng)
        return _score_row(self.inst, pred)

    def _sparse_bai(self, i, rng):
        p = self.p
        pred = lookahead.run_sparse_bai(self.inst, self.phi, p["eps"], p["delta_cs"], p["lo"], p["hi"], rng,
                                        delta=p["delta"])
        row = _score_row(self.inst, pred)
        row.update(sketch_updates=pred.sketch_updates, seed_bits=pred.memory.seed_bits)
        return row

    def _regret(self, i, rng):
        p, cfg = self.p, self.cfg
        inst_seed = derive_int(cfg.seed, "regret-instance", i) if p["fresh_instance"] else cfg.seed
        spec = cfg.resolved_instance
        inst = self.inst if self.inst is not None else _build_instance({**spec, "seed": inst_seed}, inst_seed)
        K, T = inst.K, inst.T
        s = p["s"] if p["s"] is not None else (K if p["learner"] == "hedge" else max(2, math.isqrt(K)))
        Q = p["Q"] if p["Q"] is not None else regret.choose_blocks(T, K, s)
        if p["learner"] == "hedge":
            if s != K:
                raise ConfigError("the hedge learner has support K; set s=K or leave it unset")
            learner = regret.HedgeLearner(K, horizon=Q)
        elif p["learner"] == "pool":
            learner = regret.PoolHedgeLearner(K, s, p["epoch_len"], rng=derive(cfg.seed, "pool", i), horizon=Q)
        else:
            raise ConfigError(f"unknown learner {p['learner']!r}; choose hedge or pool")
        tr = regret.run_block_reduction(inst, learner, Q, rng, complement=p["complement"])
        return {"seed": inst_seed, "learner": p["learner"], "K": K, "T": T, "Q": Q, "s": s,
                "regret": tr.regret, "exploration_rounds": tr.exploration_rounds,
                "algorithm_loss": tr.algorithm_loss, "best_arm_loss": tr.best_arm_loss,
                "learner_bits": tr.learner_bits, "bits": tr.memory.total}

    def _lemma1(self, i, rng):
        p = self.p
        res = dyadic.lemma1_gap(rng.random(p["T"]), p["lo"], p["hi"])
        ok = res.bound is None or res.value <= res.bound + 1e-12
        return {"T": p["T"], "lo": p["lo"], "hi": p["hi"], "gap": res.value,
                "bound": res.bound if res.bound is not None else "", "within_bound": int(ok)}

    def _orthogonality(self, i, rng):
        M = self.p["M"]
        seq = rng.random(1 << M)
        diffs = [abs(a - b) for L in range(M) for U in range(L + 1, M + 1)
                 for a, b in [dyadic.orthogonality_check(seq, L, U)]]
        return {"M": M, "pairs": len(diffs), "max_abs_diff": max(diffs)}

    def _lb_error(self, i, rng):
        M = self.p["M"]
        t = lowerbounds.lb_error_trial(M, rng, shared=bool(self.p["shared"]))
        return {"M": M, "m": t.m, "b": t.b, "chosen": t.chosen, "error": t.error, "bound": 1 / (8 * M)}

    def _lb_claim4(self, i, rng):
        r = lowerbounds.claim4_oracle(i + 1)
        return {"d": r.d, "value": float(r.value), "value_exact": str(r.value),
                "equal_parents": str(r.equal_parents), "bound": str(r.bound), "holds": int(r.holds)}

    def _sd_demo(self, i, rng):
        p = self.p
        t = lowerbounds.sd_trial(p["n"], p["A"], p["B"], p["c"], self.lam, p["T"], rng)
        return {k: (int(v) if isinstance(v, bool) else v) for k, v in asdict(t).items()}

    def _sparsity(self, i, rng):
        p = self.p
        inst = instances.gen_polarized(p["K"], p["T"], p["r"], seed=derive_int(self.cfg.seed, "sparsity", i))
        prof = instances.local_sparsity(inst, p["w"])
        bound = instances.claim1_bound(p["K"], p["T"], p["r"])
        return {"K": p["K"], "T": p["T"], "r": p["r"], "w": p["w"], "phi": prof.phi, "bound": bound,
                "within_bound": int(prof.phi <= bound), "worst_window_start": prof.worst_window_start}

    def _sketch_bench(self, i, rng):
        p = self.p
        stream, counts = polarized_stream(p["k"], p["r"], p["heavy"], p["light"], rng)
        phi = stream_sparsity(counts)
        sk = countsketch.new_sketch(p["k"], phi, p["eps"], p["delta"], n_est=int(counts.sum()),
                                    seed=derive_int(self.cfg.seed, "sketch", i))
        for item in stream.tolist():
            sk.update(item, 1.0)
        top = sk.approx_top()
        n1 = int(counts.max())
        metered = sk.memory().total
        formula = countsketch.bits_formula(sk.params)
        return {"k": p["k"], "n1": n1, "returned": top, "returned_count": int(counts[top]),
                "success": int(counts[top] >= (1 - p["eps"]) * n1), "depth": sk.params.depth,
                "width": sk.params.width, "bits": metered, "bits_formula": formula,
                "bits_match": int(metered == formula == sk.bits_used())}


def _n_trials(cfg: ExperimentConfig) -> int:
    return cfg.resolved_params["d_max"] if cfg.kind == "lb-claim4" else cfg.trials


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Run every trial, capture per-trial failures, summarize and optionally write output."""
    cfg.validate()
    run = _Runner(cfg).rows()
    records, failures = [], 0
    for i in range(_n_trials(cfg)):
        rng = derive(cfg.seed, cfg.kind, i)
        try:
            row = {"trial": i, "status": "ok", **run(i, rng)}
        except ConfigError:
            raise
        except Exception as exc:  # noqa: BLE001 - recorded, counted, surfaced by the caller
            failures += 1
            row = {"trial": i, "status": "error", "error_message": f"{type(exc).__name__}: {exc}"}
        records.append(row)
    summary = {}
    if records and failures < len(records):
        tmp = ExperimentResult(cfg, records, {}, failures)
        for name in METRICS[cfg.kind]:
            summary[name] = summarize(tmp.column(name))
    result = ExperimentResult(cfg, records, summary, failures)
    if write and cfg.out is not None:
        write_result(result, cfg.out, cfg.format)
    return result


def failure_rate_exceeded(result: ExperimentResult) -> bool:
    n = len(result.records)
    return n > 0 and result.failures / n > result.config.max_failure_rate


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------


def fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if v is None else str(v)


def columns(kind: str) -> list[str]:
    return ["trial", "status"] + SCHEMAS[kind] + ["error_message"]


def records_csv(result: ExperimentResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = columns(result.config.kind)
    writer.writerow(cols)
    for r in result.records:
        writer.writerow([fmt(r.get(c, "")) for c in cols])
    return buf.getvalue()


def summary_csv(result: ExperimentResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "mean", "std", "se", "count", "ci_low", "ci_high", "failures"])
    for name, s in result.summary.items():
        writer.writerow([name, fmt(s.mean), fmt(s.std), fmt(s.se), s.count, fmt(s.ci_low), fmt(s.ci_high),
                         result.failures])
    return buf.getvalue()


def _json_value(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(f"{float(v):.12g}")
    return v


def result_json(result: ExperimentResult) -> str:
    cfg = result.config
    doc = {
        "config": {"kind": cfg.kind, "instance": cfg.resolved_instance, "params": cfg.resolved_params,
                   "trials": cfg.trials, "seed": cfg.seed},
        "records": [{k: _json_value(v) for k, v in r.items()} for r in result.records],
        "summary": {k: {f: _json_value(x) for f, x in asdict(s).items()} for k, s in result.summary.items()},
        "failures": result.failures,
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def write_result(result: ExperimentResult, out, fmt_: str = "csv") -> list[Path]:
    out = Path(out)
    if fmt_ == "json":
        out.write_text(result_json(result))
        return [out]
    out.write_text(records_csv(result))
    summary_path = out.with_name(out.stem + ".summary.csv")
    summary_path.write_text(summary_csv(result))
    return [out, summary_path]


def read_records_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --------------------------------------------------------------------------
# convenience wrappers
# --------------------------------------------------------------------------


def lb_error_experiment(M: int, trials: int, seed: int = 0, shared: bool = False) -> ExperimentResult:
    cfg = ExperimentConfig("lb-error", params={"M": M, "shared": shared}, trials=trials, seed=seed)
    return run_experiment(cfg, write=False)


def claim4_oracle(d: int, alpha=None) -> lowerbounds.Claim4Result:
    return lowerbounds.claim4_oracle(d, alpha)


@dataclass(frozen=True)
class SDSummary:
    hit_rate: MetricSummary
    conditional_accuracy: float | None
    sd_answer_accuracy: MetricSummary
    hits: int
    trials: int
    min_hit_margin: float | None


def sd_demo(n: int, A, B, c: int = 2, lam="2/5", T: int = 16384, trials: int = 1000, seed: int = 0) -> SDSummary:
    params = {"n": n, "A": sorted(A), "B": sorted(B), "c": c, "lam": str(lam), "T": T}
    res = run_experiment(ExperimentConfig("sd-demo", params=params, trials=trials, seed=seed), write=False)
    if res.failures:
        raise ExperimentError(f"{res.failures} sd-demo trial(s) failed")
    hits = [r for r in res.records if r["hit"]]
    cond = sum(r["correct"] for r in hits) / len(hits) if hits else None
    margin = min(r["margin"] for r in hits) if hits else None
    return SDSummary(res.summary["hit"], cond, res.summary["answer_correct"], len(hits), trials, margin)
