"""Experiment runner: config parsing, execution, persistence, diagnostics.

One binary, three subcommands:

* ``run``          -- execute a configured experiment across seeds
* ``regret-bench`` -- adaptive methods on synthetic bounded response
                      sequences, checked against their regret bounds
* ``unify-check``  -- verify the one-step multiplicative-update form
                      reproduces every baseline's closed-form coefficients

Configs are JSON documents with a flat, fully documented key set; unknown
keys are rejected by name.  All floats are serialized with 12 significant
digits so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .aggregator import (
    AggregatorMethod,
    MethodKind,
    aaggff_d_step,
    aaggff_s_step,
    baseline_coefficients,
    eg_unified_step,
    ftrl_init,
    ons_init,
)
from .decision import decision_grad, lipschitz_constants
from .errors import ConfigError, FairaggError
from .fedsim import (
    RoundReport,
    ServerOptKind,
    ServerOptimizer,
    SimulationState,
    run_round,
)
from .metrics import PerformanceSummary, cumulative_regret
from .modeldata import (
    ModelKind,
    ModelSpec,
    PartitionScheme,
    PartitionSpec,
    init_params,
    make_synthetic,
    partition,
)
from .response import (
    DEFAULT_CDF_CROSS_DEVICE,
    DEFAULT_CDF_CROSS_SILO,
    CdfFamily,
    CdfKind,
    ResponseBounds,
)
from .simplex import uniform_decision

FLOAT_FORMAT = ".12g"

ROUNDS_HEADER = (
    "round,sampled_ids,mean_feedback,decision_loss,decision,"
    "eval_avg,eval_worst10,eval_best10,gini_x100,gap"
)
SUMMARY_HEADER = "seed,avg,worst10,best10,gini_x100,gap"


@dataclass
class ExperimentConfig:
    """Declarative description of one experiment; field names are config keys."""

    K: int
    T: int
    method: str
    C: float = 1.0
    B: int = 20
    E: int = 1
    lr: float = 0.1
    lr_decay: float = 0.99
    decay_step: int = 10
    prox_mu: float = 0.0
    weight_decay: float = 0.0
    q: float = 1.0
    tilt: float = 1.0
    loss_ceiling: float = 3.0
    cdf: str | None = None
    cdf_scale: float = 1.0
    cdf_shape: float | None = None
    bounds_mode: str = "CrossSilo"
    c1: float | None = None
    c2: float | None = None
    partition: str = "IID"
    alpha: float = 0.5
    classes_per_client: int = 2
    model: str = "LogisticRegression"
    input_dim: int = 2
    num_classes: int = 2
    hidden: int = 16
    num_samples: int = 2000
    server_opt: str = "SGD"
    server_lr: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.99
    tau: float = 1e-3
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str = "results"


_REQUIRED_KEYS = ("K", "T", "method")

_KEY_TYPES: dict[str, tuple[type, ...]] = {
    "K": (int,), "T": (int,), "B": (int,), "E": (int,), "decay_step": (int,),
    "classes_per_client": (int,), "input_dim": (int,), "num_classes": (int,),
    "hidden": (int,), "num_samples": (int,),
    "C": (int, float), "lr": (int, float), "lr_decay": (int, float),
    "prox_mu": (int, float), "weight_decay": (int, float), "q": (int, float),
    "tilt": (int, float), "loss_ceiling": (int, float), "cdf_scale": (int, float),
    "cdf_shape": (int, float), "c1": (int, float), "c2": (int, float),
    "alpha": (int, float), "server_lr": (int, float), "beta1": (int, float),
    "beta2": (int, float), "tau": (int, float),
    "method": (str,), "cdf": (str,), "bounds_mode": (str,), "partition": (str,),
    "model": (str,), "server_opt": (str,), "output_dir": (str,),
    "seeds": (list,),
}

_ENUM_KEYS = {
    "method": {k.value for k in MethodKind},
    "cdf": {f.value for f in CdfFamily},
    "bounds_mode": {"CrossSilo", "CrossDevice", "Explicit"},
    "partition": {s.value for s in PartitionScheme},
    "model": {m.value for m in ModelKind},
    "server_opt": {k.value for k in ServerOptKind},
}


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a JSON config document."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object of key/value pairs")

    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    missing = [key for key in _REQUIRED_KEYS if key not in raw]
    if missing:
        raise ConfigError(f"missing required config key(s): {', '.join(missing)}")

    for key, value in raw.items():
        expected = _KEY_TYPES.get(key)
        if expected is None:
            continue
        if value is None and key in ("cdf", "cdf_shape", "c1", "c2"):
            continue
        if not isinstance(value, expected) or isinstance(value, bool):
            names = "/".join(t.__name__ for t in expected)
            raise ConfigError(f"config key '{key}' must be {names}, got {value!r}")
        if key in _ENUM_KEYS and value not in _ENUM_KEYS[key]:
            allowed = ", ".join(sorted(_ENUM_KEYS[key]))
            raise ConfigError(f"config key '{key}' must be one of: {allowed}")
    if "seeds" in raw:
        seeds = raw["seeds"]
        if not seeds or not all(
            isinstance(s, int) and not isinstance(s, bool) for s in seeds
        ):
            raise ConfigError("config key 'seeds' must be a nonempty list of integers")

    cfg = ExperimentConfig(**raw)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    if cfg.K < 1 or cfg.T < 1:
        raise ConfigError("config keys 'K' and 'T' must be >= 1")
    if not (0.0 < cfg.C <= 1.0):
        raise ConfigError("config key 'C' must lie in (0, 1]")
    if cfg.B < 1 or cfg.E < 0:
        raise ConfigError("config keys 'B' must be >= 1 and 'E' >= 0")
    for key in ("lr", "lr_decay", "server_lr", "tau"):
        if getattr(cfg, key) <= 0.0:
            raise ConfigError(f"config key '{key}' must be positive")
    if cfg.decay_step < 1:
        raise ConfigError("config key 'decay_step' must be >= 1")
    if cfg.prox_mu < 0.0 or cfg.weight_decay < 0.0:
        raise ConfigError("config keys 'prox_mu' and 'weight_decay' must be >= 0")
    if cfg.q < 0.0:
        raise ConfigError("config key 'q' must be >= 0")
    if cfg.tilt <= 0.0:
        raise ConfigError("config key 'tilt' must be positive")
    if cfg.bounds_mode == "Explicit" and (cfg.c1 is None or cfg.c2 is None):
        raise ConfigError("bounds_mode 'Explicit' requires config keys 'c1' and 'c2'")


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical form: every field explicit, keys sorted, stable separators."""
    return json.dumps(asdict(cfg), sort_keys=True, indent=2) + "\n"


def resolve_bounds(cfg: ExperimentConfig) -> ResponseBounds:
    if cfg.bounds_mode == "CrossSilo":
        return ResponseBounds.cross_silo(cfg.K)
    if cfg.bounds_mode == "CrossDevice":
        return ResponseBounds.cross_device(cfg.C)
    return ResponseBounds(float(cfg.c1), float(cfg.c2))


def resolve_cdf(cfg: ExperimentConfig) -> CdfKind:
    if cfg.cdf is None:
        default = (
            DEFAULT_CDF_CROSS_DEVICE
            if cfg.bounds_mode == "CrossDevice"
            else DEFAULT_CDF_CROSS_SILO
        )
        family = default.family
    else:
        family = CdfFamily(cfg.cdf)
    shape = cfg.cdf_shape if family is not CdfFamily.EXPONENTIAL else None
    return CdfKind(family, scale=cfg.cdf_scale, shape=shape)


def resolve_method(cfg: ExperimentConfig) -> AggregatorMethod:
    return AggregatorMethod(
        kind=MethodKind(cfg.method),
        q=cfg.q,
        tilt=cfg.tilt,
        loss_ceiling=cfg.loss_ceiling,
    )


def build_state(cfg: ExperimentConfig, seed: int, threads: int = 1) -> SimulationState:
    dataset = make_synthetic(cfg.num_samples, cfg.input_dim, cfg.num_classes, seed)
    spec = ModelSpec(
        kind=ModelKind(cfg.model),
        input_dim=cfg.input_dim,
        num_classes=cfg.num_classes,
        hidden=cfg.hidden,
    )
    shards = partition(
        dataset,
        PartitionSpec(
            scheme=PartitionScheme(cfg.partition),
            k=cfg.K,
            seed=seed,
            alpha=cfg.alpha,
            classes_per_client=cfg.classes_per_client,
        ),
    )
    server = ServerOptimizer(
        kind=ServerOptKind(cfg.server_opt),
        lr=cfg.server_lr,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        tau=cfg.tau,
    )
    return SimulationState(
        master_seed=seed,
        model_spec=spec,
        clients=shards,
        params=init_params(spec, seed),
        method=resolve_method(cfg),
        cdf=resolve_cdf(cfg),
        bounds=resolve_bounds(cfg),
        sampling_c=cfg.C,
        epochs=cfg.E,
        batch_size=cfg.B,
        lr=cfg.lr,
        lr_decay=cfg.lr_decay,
        decay_step=cfg.decay_step,
        prox_mu=cfg.prox_mu,
        weight_decay=cfg.weight_decay,
        server_opt=server,
        threads=threads,
    )


def _fmt(x: float) -> str:
    return format(float(x), FLOAT_FORMAT)


def _rounds_row(report: RoundReport) -> str:
    s = report.summary
    return ",".join(
        [
            str(report.round),
            ";".join(str(i) for i in report.sampled_ids),
            _fmt(report.mean_feedback),
            _fmt(report.decision_loss),
            ";".join(_fmt(x) for x in report.decision),
            _fmt(s.average),
            _fmt(s.worst10),
            _fmt(s.best10),
            _fmt(s.gini_x100),
            _fmt(s.acc_parity_gap),
        ]
    )


def write_results(
    reports_by_seed: dict[int, list[RoundReport]],
    summaries: dict[int, PerformanceSummary],
    out_dir: str | Path,
) -> None:
    """Write one rounds CSV per seed plus the aggregated summary CSV."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for seed, reports in reports_by_seed.items():
            lines = [ROUNDS_HEADER] + [_rounds_row(r) for r in reports]
            (out / f"rounds_seed{seed}.csv").write_text("\n".join(lines) + "\n")

        rows = [SUMMARY_HEADER]
        table = []
        for seed in sorted(summaries):
            s = summaries[seed]
            values = [s.average, s.worst10, s.best10, s.gini_x100, s.acc_parity_gap]
            table.append(values)
            rows.append(str(seed) + "," + ",".join(_fmt(v) for v in values))
        if table:
            arr = np.asarray(table)
            rows.append("mean," + ",".join(_fmt(v) for v in arr.mean(axis=0)))
            rows.append("std," + ",".join(_fmt(v) for v in arr.std(axis=0)))
        (out / "summary.csv").write_text("\n".join(rows) + "\n")
    except OSError as exc:
        raise FairaggError(f"failed writing results under {out}: {exc}") from exc


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> int:
    """Run every configured seed and persist results; 0 on success."""
    try:
        reports_by_seed: dict[int, list[RoundReport]] = {}
        summaries: dict[int, PerformanceSummary] = {}
        for seed in cfg.seeds:
            state = build_state(cfg, seed, threads=threads)
            reports = [run_round(state, t) for t in range(cfg.T)]
            reports_by_seed[seed] = reports
            summaries[seed] = reports[-1].summary
        write_results(reports_by_seed, summaries, cfg.output_dir)
    except FairaggError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# regret-bench
# ---------------------------------------------------------------------------

def synthetic_responses(
    k: int, rounds: int, c2: float, seed: int, block: int = 50
) -> np.ndarray:
    """Bounded response sequence whose favored coordinate rotates per block.

    Rotation keeps the sequence from being trivially stationary, which is the
    interesting regime for regret accounting.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    responses = rng.uniform(0.0, 0.5 * c2, size=(rounds, k))
    for t in range(rounds):
        favored = (t // block) % k
        responses[t, favored] = rng.uniform(0.5 * c2, c2)
    return responses


def sequence_regret(method: str, responses: np.ndarray, c2: float) -> float:
    """Cumulative regret of an adaptive method on a full-information log."""
    rounds, k = responses.shape
    constants = lipschitz_constants(ResponseBounds(0.0, c2), 1.0)
    decision = uniform_decision(k)
    decisions = []
    if method == "ons":
        state = ons_init(k, constants.l_inf)
        for t in range(rounds):
            decisions.append(decision)
            grad = decision_grad(decision, responses[t])
            state, decision = aaggff_s_step(state, grad)
    elif method == "ftrl":
        state = ftrl_init(k, constants.l_inf)
        for t in range(rounds):
            decisions.append(decision)
            grad = decision_grad(decision, responses[t])
            state, decision = aaggff_d_step(state, grad)
    else:
        raise ValueError(f"unknown method {method!r}")
    regret, _ = cumulative_regret(decisions, list(responses))
    return regret


def cmd_regret_bench(args: argparse.Namespace) -> int:
    k = args.clients
    c2 = 1.0 / k
    l_inf = c2  # bounds [0, 1/k] give c2/(1+c1) = c2
    horizons = [int(t) for t in args.rounds.split(",")]
    lines = ["method,T,regret,bound"]
    ok = True
    for horizon in horizons:
        responses = synthetic_responses(k, horizon, c2, args.seed)
        for method, label in (("ons", "AAggFFS"), ("ftrl", "AAggFFD")):
            regret = sequence_regret(method, responses, c2)
            if method == "ons":
                bound = 2.0 * l_inf * k * (1.0 + math.log(1.0 + horizon / (16.0 * k)))
            else:
                bound = 2.0 * l_inf * math.sqrt(horizon * math.log(k))
            passed = regret <= bound
            ok = ok and passed
            print(
                f"{label}  T={horizon:<6d} regret={regret:.6f}  "
                f"bound={bound:.6f}  {'PASS' if passed else 'FAIL'}"
            )
            lines.append(f"{label},{horizon},{_fmt(regret)},{_fmt(bound)}")
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        (out / "regret_bench.csv").write_text("\n".join(lines) + "\n")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# unify-check
# ---------------------------------------------------------------------------

def unify_instance(
    kind: MethodKind, rng: np.random.Generator
) -> tuple[AggregatorMethod, np.ndarray, np.ndarray, np.ndarray, float]:
    """Draw one random (method, sizes, losses) instance and its EG drive.

    Returns (method, sizes, losses, eg_response, eg_step).
    """
    k = int(rng.integers(2, 11))
    sizes = rng.integers(1, 101, size=k).astype(float)
    losses = rng.uniform(0.05, 1.8, size=k)
    if kind is MethodKind.QFEDAVG:
        method = AggregatorMethod(kind, q=float(rng.choice([0.1, 1.0, 5.0])))
        return method, sizes, losses, method.q * np.log(losses), 1.0
    if kind is MethodKind.TERM:
        method = AggregatorMethod(kind, tilt=float(rng.choice([0.1, 1.0, 10.0])))
        return method, sizes, losses, losses.copy(), 1.0 / method.tilt
    if kind is MethodKind.PROPFAIR:
        method = AggregatorMethod(kind, loss_ceiling=float(rng.choice([2.0, 3.0, 5.0])))
        return method, sizes, losses, -np.log(method.loss_ceiling - losses), 1.0
    if kind is MethodKind.AFL:
        # Drive the power high enough that everything but the argmax
        # vanishes numerically: scale by the runner-up log-gap.
        log_losses = np.log(losses)
        ordered = np.sort(log_losses)
        gap = max(ordered[-1] - ordered[-2], 1e-12)
        power = 60.0 / gap
        return AggregatorMethod(kind), sizes, losses, power * log_losses, 1.0
    return AggregatorMethod(kind), sizes, losses, np.zeros(k), 1.0


def cmd_unify_check(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 11]))
    ok = True
    for kind in (
        MethodKind.STATIC,
        MethodKind.AFL,
        MethodKind.QFEDAVG,
        MethodKind.TERM,
        MethodKind.PROPFAIR,
    ):
        worst = 0.0
        for _ in range(args.instances):
            method, sizes, losses, response, step = unify_instance(kind, rng)
            closed = baseline_coefficients(method, sizes, losses)
            eg = eg_unified_step(sizes / sizes.sum(), response, step)
            worst = max(worst, float(np.max(np.abs(closed - eg))))
        passed = worst <= 1e-9
        ok = ok and passed
        print(f"{kind.value:<10s} max |closed - eg| = {worst:.3e}  "
              f"{'PASS' if passed else 'FAIL'}")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg = parse_config(Path(args.config).read_text())
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.output is not None:
        cfg.output_dir = args.output
    if args.seeds is not None:
        try:
            cfg.seeds = [int(s) for s in args.seeds.split(",")]
        except ValueError:
            print("error: --seeds must be a comma-separated integer list", file=sys.stderr)
            return 1
    return run_experiment(cfg, threads=args.threads)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairagg",
        description="Fairness-aware federated aggregation experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a configured experiment")
    p_run.add_argument("--config", required=True, help="path to a JSON config")
    p_run.add_argument("--output", default=None, help="output directory override")
    p_run.add_argument("--seeds", default=None, help="comma-separated seed list override")
    p_run.add_argument("--threads", type=int, default=1,
                       help="client-update worker threads (never affects results)")
    p_run.set_defaults(handler=cmd_run)

    p_bench = sub.add_parser("regret-bench",
                             help="check adaptive methods against regret bounds")
    p_bench.add_argument("--rounds", default="100,500,2000",
                         help="comma-separated horizons")
    p_bench.add_argument("--clients", type=int, default=8)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--output", default=None, help="optional CSV output directory")
    p_bench.set_defaults(handler=cmd_regret_bench)

    p_unify = sub.add_parser("unify-check",
                             help="verify baselines against their one-step EG form")
    p_unify.add_argument("--instances", type=int, default=100)
    p_unify.add_argument("--seed", type=int, default=0)
    p_unify.set_defaults(handler=cmd_unify_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
