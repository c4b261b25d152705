"""Command-line surface and desk-scale experiment entry points.

Subcommands:

* ``run``         -- class-incremental training over a seed list; writes
                     runs.csv and report.json.
* ``ablation``    -- cumulative trick ablation; writes ablation.csv/.json.
* ``balance-toy`` -- buffer-balance study on a small label stream; writes
                     balance.csv/.json.
* ``omission``    -- analytic vs Monte-Carlo class-omission probability.
* ``gradcheck``   -- analytic-vs-numeric gradient verification.

Configuration is a flat ``key = value`` text file (``#`` starts a comment);
command-line flags override file values. Unknown keys are rejected. The
resolved configuration is hashed and echoed into every output row, so runs
are auditable and byte-reproducible (wall-clock columns aside). Exit codes:
2 config error, 3 data error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import traceback
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datasets import (IdxFormatError, load_fashion_mnist, make_class_il_tasks,
                       synthetic_class_il_stream)
from .mlp import (Mlp, finite_difference_grads, gradient_check,
                  softmax_cross_entropy)
from .sampling import (BALANCED_RESERVOIR, LOSS_AWARE_RESERVOIR, RESERVOIR,
                       RING, ReplayBuffer, StoredExample, omission_probability)
from .trainer import (TRICK_TOKENS, TrainConfig, ablation_suite, run_class_il,
                      run_joint_baseline)

DATA_ENV_VAR = "REPLAYLAB_DATA"
RUNS_SCHEMA = "replay-lab-runs-v1"
ABLATION_SCHEMA = "replay-lab-ablation-v1"
BALANCE_SCHEMA = "replay-lab-balance-v1"
OMISSION_SCHEMA = "replay-lab-omission-v1"

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_DATA_ERROR = 3
EXIT_RUNTIME_ERROR = 4


class ConfigError(ValueError):
    """Bad configuration file, key, value, or flag combination."""


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text or text.lower() == "none":
        return ()
    return tuple(int(tok) for tok in text.split(","))


def _parse_tricks(text: str) -> tuple[str, ...]:
    text = text.strip().lower()
    if not text or text == "none":
        return ()
    tokens = tuple(tok.strip() for tok in text.split(","))
    bad = [t for t in tokens if t not in TRICK_TOKENS]
    if bad:
        raise ValueError(f"unknown tricks {bad}; valid: {list(TRICK_TOKENS)}")
    return tokens


# Registry of configuration keys: default value and parser. The documented
# configuration surface is exactly this table (see README).
CONFIG_KEYS: dict[str, tuple[object, object]] = {
    "dataset": ("synthetic", str),                  # synthetic | fashion-mnist
    "data_dir": ("", str),                          # empty -> $REPLAYLAB_DATA
    "method": ("auto", str),                        # auto | joint
    "seeds": ((0,), _parse_int_list),
    "classes_per_task": (2, int),
    "buffer_capacity": (500, int),
    "replay_batch_size": (32, int),
    "stream_batch_size": (32, int),
    "epochs_per_task": (1, int),
    "hidden_dims": ((256, 256), _parse_int_list),
    "lr0": (0.1, float),
    "decay_fraction": (1.0 / 6.0, float),
    "tricks": ((), _parse_tricks),
    "base_strategy": ("reservoir", str),
    "replay_enabled": (True, _parse_bool),
    "aug.max_shift": (0, int),
    "aug.hflip_prob": (0.0, float),
    "aug.stream_enabled": (False, _parse_bool),
    "aug.iba_enabled": (False, _parse_bool),        # equivalent to tricks += iba
    "image_dims": ((), _parse_int_list),            # empty -> inferred
    "bias.epochs": (50, int),
    "bias.batch_size": (32, int),
    "bias.lr": (0.01, float),
    "synthetic.class_count": (10, int),
    "synthetic.per_class": (300, int),
    "synthetic.per_class_test": (100, int),
    "synthetic.feature_dim": (32, int),
    "synthetic.separation": (4.0, float),
    "synthetic.seed": (0, int),
}


@dataclass
class ExperimentConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def canonical_lines(self) -> list[str]:
        out = []
        for key in sorted(self.values):
            val = self.values[key]
            if isinstance(val, tuple):
                rendered = ",".join(str(v) for v in val) or "none"
            elif isinstance(val, bool):
                rendered = "true" if val else "false"
            elif isinstance(val, float):
                rendered = repr(val)
            else:
                rendered = str(val)
            out.append(f"{key} = {rendered}")
        return out

    def config_hash(self) -> str:
        blob = "\n".join(self.canonical_lines()).encode()
        return hashlib.sha256(blob).hexdigest()

    def echo_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in sorted(self.values.items())}


def parse_config_text(text: str) -> dict:
    """Parse a flat key = value document, validating keys and values."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        _, parser = CONFIG_KEYS[key]
        try:
            values[key] = parser(val)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return values


def load_experiment_config(path: str | None, overrides: dict) -> ExperimentConfig:
    values = {key: default for key, (default, _) in CONFIG_KEYS.items()}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        values.update(parse_config_text(text))
    values.update(overrides)
    cfg = ExperimentConfig(values)
    _validate_experiment(cfg)
    return cfg


def _validate_experiment(cfg: ExperimentConfig) -> None:
    if cfg["dataset"] not in ("synthetic", "fashion-mnist"):
        raise ConfigError(f"dataset must be synthetic or fashion-mnist, got {cfg['dataset']!r}")
    if cfg["method"] not in ("auto", "joint"):
        raise ConfigError(f"method must be auto or joint, got {cfg['method']!r}")
    if not cfg["seeds"]:
        raise ConfigError("seeds must list at least one seed")
    tricks = cfg["tricks"]
    if "brs" in tricks and "lars" in tricks:
        raise ConfigError("tricks brs and lars are mutually exclusive")
    if "bic" in tricks and "cbic" in tricks:
        raise ConfigError("tricks bic and cbic are mutually exclusive")


def train_config_from_experiment(cfg: ExperimentConfig, seed: int) -> TrainConfig:
    tricks = cfg["tricks"]
    image_dims = tuple(cfg["image_dims"])
    if not image_dims:
        image_dims = (28, 28, 1) if cfg["dataset"] == "fashion-mnist" else None
    try:
        return TrainConfig(
            buffer_capacity=cfg["buffer_capacity"],
            replay_batch_size=cfg["replay_batch_size"],
            stream_batch_size=cfg["stream_batch_size"],
            epochs_per_task=cfg["epochs_per_task"],
            hidden_dims=tuple(cfg["hidden_dims"]),
            lr0=cfg["lr0"],
            decay_fraction=cfg["decay_fraction"],
            iba="iba" in tricks or cfg["aug.iba_enabled"],
            bic="bic" in tricks,
            cbic="cbic" in tricks,
            elrd="elrd" in tricks,
            brs="brs" in tricks,
            lars="lars" in tricks,
            base_strategy=cfg["base_strategy"],
            replay_enabled=cfg["replay_enabled"],
            aug_max_shift=cfg["aug.max_shift"],
            aug_hflip_prob=cfg["aug.hflip_prob"],
            aug_stream_enabled=cfg["aug.stream_enabled"],
            image_dims=image_dims,
            bias_epochs=cfg["bias.epochs"],
            bias_batch_size=cfg["bias.batch_size"],
            bias_lr=cfg["bias.lr"],
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_task_stream(cfg: ExperimentConfig):
    if cfg["dataset"] == "synthetic":
        return synthetic_class_il_stream(
            class_count=cfg["synthetic.class_count"],
            per_class_train=cfg["synthetic.per_class"],
            per_class_test=cfg["synthetic.per_class_test"],
            feature_dim=cfg["synthetic.feature_dim"],
            separation=cfg["synthetic.separation"],
            classes_per_task=cfg["classes_per_task"],
            seed=cfg["synthetic.seed"],
        )
    data_dir = cfg["data_dir"] or os.environ.get(DATA_ENV_VAR, "")
    if not data_dir:
        raise FileNotFoundError(
            f"no data_dir configured and ${DATA_ENV_VAR} is not set")
    train, test = load_fashion_mnist(data_dir)
    rng = np.random.default_rng(np.random.SeedSequence([cfg["synthetic.seed"], 0xD47A]))
    return make_class_il_tasks(train, test, cfg["classes_per_task"], rng)


# -- output writing ------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def write_csv(path: Path, schema: str, config_hash: str, header: list[str],
              rows: list[list]) -> None:
    lines = [f"# {schema} config_sha256={config_hash}", ",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# -- subcommands ----------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = load_experiment_config(args.config, _run_overrides(args))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stream = build_task_stream(cfg)
    chash = cfg.config_hash()

    reports = []
    for seed in cfg["seeds"]:
        train_cfg = train_config_from_experiment(cfg, seed)
        if cfg["method"] == "joint":
            reports.append(run_joint_baseline(stream, train_cfg))
        else:
            reports.append(run_class_il(stream, train_cfg))

    n_tasks = stream.n_tasks
    header = (["method", "tricks", "seed", "config_hash"]
              + [f"acc_task_{t}" for t in range(n_tasks)]
              + ["average_accuracy", "wall_clock_seconds"])
    rows = []
    for rep in reports:
        tricks = "+".join(t for t in TRICK_TOKENS if rep.config.get(t)) or "none"
        rows.append([rep.method, tricks, rep.seed, chash]
                    + rep.per_task_accuracy
                    + [rep.average_accuracy, rep.wall_clock_seconds])
    write_csv(out_dir / "runs.csv", RUNS_SCHEMA, chash, header, rows)
    write_json(out_dir / "report.json", {
        "schema": RUNS_SCHEMA,
        "config": cfg.echo_dict(),
        "config_sha256": chash,
        "runs": [rep.to_json_dict() for rep in reports],
    })
    print(f"wrote {out_dir / 'runs.csv'} and {out_dir / 'report.json'}")
    return EXIT_OK


def cmd_ablation(args) -> int:
    cfg = load_experiment_config(args.config, _run_overrides(args))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stream = build_task_stream(cfg)
    chash = cfg.config_hash()
    base = train_config_from_experiment(cfg, cfg["seeds"][0])
    rows = ablation_suite(stream, base, cfg["seeds"])

    header = ["label", "tricks", "seeds", "config_hash",
              "mean_accuracy", "std_accuracy"]
    csv_rows = []
    for row in rows:
        tricks = "+".join(row.config.active_tricks()) or "none"
        csv_rows.append([row.label, tricks,
                         ";".join(str(s) for s in cfg["seeds"]), chash,
                         row.mean_accuracy, row.std_accuracy])
    write_csv(out_dir / "ablation.csv", ABLATION_SCHEMA, chash, header, csv_rows)
    write_json(out_dir / "ablation.json", {
        "schema": ABLATION_SCHEMA,
        "config": cfg.echo_dict(),
        "config_sha256": chash,
        "rows": [{
            "label": row.label,
            "tricks": list(row.config.active_tricks()),
            "mean_accuracy": row.mean_accuracy,
            "std_accuracy": row.std_accuracy,
            "runs": [rep.to_json_dict() for rep in row.reports],
        } for row in rows],
    })
    print(f"wrote {out_dir / 'ablation.csv'} and {out_dir / 'ablation.json'}")
    return EXIT_OK


TOY_CLASS_COUNT = 6
TOY_PER_CLASS = 170
TOY_CAPACITY = 12
TOY_STRATEGIES = (RESERVOIR, BALANCED_RESERVOIR, LOSS_AWARE_RESERVOIR, RING)


def balance_toy(repetitions: int, seed: int, class_count: int = TOY_CLASS_COUNT,
                per_class: int = TOY_PER_CLASS, capacity: int = TOY_CAPACITY,
                strategies=TOY_STRATEGIES) -> dict[str, np.ndarray]:
    """Stream a small balanced label stream into one buffer per strategy and
    record the final per-class counts.

    Returns, per strategy, a (repetitions, class_count) matrix of counts.
    The stream order is shuffled fresh each repetition, and all strategies
    within a repetition see the same order, so their statistics are paired.
    """
    labels = np.repeat(np.arange(class_count), per_class)
    counts = {s: np.zeros((repetitions, class_count)) for s in strategies}
    no_features = np.empty(0)
    for rep in range(repetitions):
        children = np.random.SeedSequence([seed, rep]).spawn(len(strategies) + 1)
        order = np.random.default_rng(children[0]).permutation(labels.size)
        stream = labels[order]
        for strategy, child in zip(strategies, children[1:]):
            rng = np.random.default_rng(child)
            buf = ReplayBuffer(capacity, strategy, class_count=class_count)
            for label in stream:
                buf.update(StoredExample(no_features, int(label)), rng)
            for cls, n in buf.class_counts().items():
                counts[strategy][rep, cls] = n
    return counts


def cmd_balance_toy(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    counts = balance_toy(args.repetitions, args.seed)
    ideal = TOY_CAPACITY / TOY_CLASS_COUNT
    chash = hashlib.sha256(
        f"balance-toy repetitions={args.repetitions} seed={args.seed}".encode()).hexdigest()

    header = (["strategy", "repetitions", "mse_mean", "mse_std"]
              + [f"mean_count_{c}" for c in range(TOY_CLASS_COUNT)]
              + [f"std_count_{c}" for c in range(TOY_CLASS_COUNT)])
    rows, summary = [], {}
    for strategy, mat in counts.items():
        mses = ((mat - ideal) ** 2).mean(axis=1)
        rows.append([strategy, args.repetitions, float(mses.mean()), float(mses.std())]
                    + [float(x) for x in mat.mean(axis=0)]
                    + [float(x) for x in mat.std(axis=0)])
        summary[strategy] = {"mse_mean": float(mses.mean()),
                             "mse_std": float(mses.std()),
                             "mean_counts": [float(x) for x in mat.mean(axis=0)],
                             "std_counts": [float(x) for x in mat.std(axis=0)]}
        print(f"{strategy:>10}: MSE {mses.mean():.3f} +/- {mses.std():.3f}")
    write_csv(out_dir / "balance.csv", BALANCE_SCHEMA, chash, header, rows)
    write_json(out_dir / "balance.json", {
        "schema": BALANCE_SCHEMA,
        "repetitions": args.repetitions,
        "seed": args.seed,
        "ideal_per_class": ideal,
        "strategies": summary,
    })
    return EXIT_OK


def monte_carlo_omission(class_count: int, capacity: int, trials: int,
                         seed: int = 0) -> float:
    """Fraction of trials in which a class ends up unrepresented when
    ``capacity`` items are drawn uniformly from balanced classes, averaged
    over classes. Draws are processed in blocks to bound memory."""
    if class_count == 1 or capacity == 0:
        return 0.0 if class_count == 1 else 1.0
    rng = np.random.default_rng(np.random.SeedSequence([seed, class_count, capacity]))
    block = max(1, 10_000_000 // capacity)
    omitted_total = np.zeros(class_count)
    done = 0
    while done < trials:
        n = min(block, trials - done)
        draws = rng.integers(0, class_count, size=(n, capacity))
        for c in range(class_count):
            omitted_total[c] += np.sum(~np.any(draws == c, axis=1))
        done += n
    return float(omitted_total.mean() / trials)


def cmd_omission(args) -> int:
    analytic = omission_probability(args.classes, args.capacity)
    mc = monte_carlo_omission(args.classes, args.capacity, args.trials, args.seed)
    print(f"C={args.classes} B={args.capacity}: "
          f"analytic={analytic:.6f} monte_carlo={mc:.6f} ({args.trials} trials)")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        chash = hashlib.sha256(
            f"omission C={args.classes} B={args.capacity} trials={args.trials} "
            f"seed={args.seed}".encode()).hexdigest()
        write_csv(out_dir / "omission.csv", OMISSION_SCHEMA, chash,
                  ["class_count", "capacity", "analytic", "monte_carlo", "trials"],
                  [[args.classes, args.capacity, analytic, mc, args.trials]])
        write_json(out_dir / "omission.json", {
            "schema": OMISSION_SCHEMA, "class_count": args.classes,
            "capacity": args.capacity, "analytic": analytic,
            "monte_carlo": mc, "trials": args.trials, "seed": args.seed,
        })
    return EXIT_OK


class _BrokenReluBackwardMlp(Mlp):
    """Self-check fixture: backward with the ReLU mask inverted. The
    gradient checker must reject it."""

    def backward(self, cache, dlogits):
        activations, pres = cache["activations"], cache["pres"]
        delta = np.asarray(dlogits, dtype=float)
        self.weight_grads[-1] += activations[-1].T @ delta
        self.bias_grads[-1] += delta.sum(axis=0)
        for layer in range(self.n_layers - 2, -1, -1):
            delta = (delta @ self.weights[layer + 1].T) * (pres[layer] <= 0.0)
            self.weight_grads[layer] += activations[layer].T @ delta
            self.bias_grads[layer] += delta.sum(axis=0)


def _corrupted_gradient_check(seed: int) -> bool:
    """True when the checker correctly fails the broken backward."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBAD]))
    model = _BrokenReluBackwardMlp([6, 8, 5], rng)
    x = rng.uniform(0, 1, size=(4, 6))
    y = rng.integers(0, 5, size=4)
    model.zero_grads()
    logits, cache = model.forward(x)
    _, _, dlogits = softmax_cross_entropy(logits, y)
    model.backward(cache, dlogits)
    analytic = model.flat_grads()
    numeric = finite_difference_grads(model, x, y)
    tol = 1e-7 + 1e-4 * np.abs(numeric)
    return bool(np.any(np.abs(analytic - numeric) > tol))


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    all_ok = True
    for trial in range(args.trials):
        dims = [int(rng.integers(3, 9)) for _ in range(int(rng.integers(2, 5)))]
        model = Mlp(dims, rng)
        # keep pre-activations off the ReLU kink, where the subgradient and
        # a finite difference legitimately disagree
        for b in model.biases:
            b[:] = rng.uniform(0.05, 0.2, size=b.shape)
        x = rng.uniform(0, 1, size=(4, dims[0]))
        y = rng.integers(0, dims[-1], size=4)
        ok, worst = gradient_check(model, x, y)
        all_ok &= ok
        print(f"net {dims}: {'pass' if ok else 'FAIL'} (worst residual ratio {worst:.3g})")
    corrupted_detected = _corrupted_gradient_check(args.seed)
    print(f"corrupted backward rejected: {'yes' if corrupted_detected else 'NO'}")
    if all_ok and corrupted_detected:
        print("gradcheck: PASS")
        return EXIT_OK
    print("gradcheck: FAIL")
    return EXIT_CHECK_FAILED


# -- argument parsing -----------------------------------------------------------


def _run_overrides(args) -> dict:
    overrides: dict = {}
    if args.seeds is not None:
        overrides["seeds"] = _parse_int_list(args.seeds)
    if args.buffer is not None:
        overrides["buffer_capacity"] = args.buffer
    if args.tricks is not None:
        try:
            overrides["tricks"] = _parse_tricks(args.tricks)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if args.dataset is not None:
        overrides["dataset"] = args.dataset
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="replay-lab",
        description="Experience replay for class-incremental learning: "
                    "training runs, trick ablations, and sampling studies.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(p):
        p.add_argument("--config", default=None, help="flat key = value config file")
        p.add_argument("--seeds", default=None, help="comma-separated seed list")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--buffer", type=int, default=None, help="buffer capacity override")
        p.add_argument("--tricks", default=None,
                       help="comma list of {iba,bic,cbic,elrd,brs,lars} or 'none'")
        p.add_argument("--dataset", choices=["fashion-mnist", "synthetic"], default=None)

    p_run = sub.add_parser("run", help="train over the configured seed list")
    add_run_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_abl = sub.add_parser("ablation", help="cumulative trick ablation")
    add_run_flags(p_abl)
    p_abl.set_defaults(func=cmd_ablation)

    p_toy = sub.add_parser("balance-toy", help="buffer balance study (capacity 12, 6 classes)")
    p_toy.add_argument("--repetitions", type=int, default=500)
    p_toy.add_argument("--seed", type=int, default=0)
    p_toy.add_argument("--out", default="out")
    p_toy.set_defaults(func=cmd_balance_toy)

    p_om = sub.add_parser("omission", help="class-omission probability, closed form vs Monte Carlo")
    p_om.add_argument("--classes", type=int, required=True)
    p_om.add_argument("--capacity", type=int, required=True)
    p_om.add_argument("--trials", type=int, default=100_000)
    p_om.add_argument("--seed", type=int, default=0)
    p_om.add_argument("--out", default=None)
    p_om.set_defaults(func=cmd_omission)

    p_gc = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p_gc.add_argument("--seed", type=int, default=0)
    p_gc.add_argument("--trials", type=int, default=20)
    p_gc.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except (IdxFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA_ERROR
    except Exception:
        traceback.print_exc()
        return EXIT_RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
