"""Command-line front end: train, eval, compare, bench, trace.

Configuration comes from an optional plain-text file of `key = value`
lines ('#' starts a comment) plus command-line flags; flags win.  All
outputs are CSV (or JSON-lines for traces) written atomically into the
output directory.

Exit codes: 0 success, 2 configuration error, 3 runtime error,
4 training divergence.
"""

import argparse
import csv
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from codedcast import agent, baselines, env
from codedcast.cache import ProblemInstance, random_instance, segment_prefetch



EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_DIVERGED = 4

ALGORITHMS = ("uncoded", "gcm", "greedy", "oracle", "agent")


class ConfigError(Exception):
    pass


@dataclass
class ExperimentConfig:
    num_users: int = 4            # K
    num_files: int = 4            # N
    cache_files: int = 1          # M
    file_bits: int = 2            # F
    seed: int = 0
    iterations: int = 500
    eval_episodes: int = 100
    algorithms: tuple = ("uncoded", "gcm", "greedy", "agent")
    out_dir: str = "."
    checkpoint: str = ""
    prefetch: str = "random"      # "random" or "segments"
    vertex_budget: int = baselines.DEFAULT_VERTEX_BUDGET
    k_min: int = 5
    k_max: int = 10
    reps: int = 5
    batch_steps: int = 500
    entropy_coef: float = 0.05
    lr0: float = 5e-3
    lr_decay: float = 0.9
    lr_decay_every: int = 100
    discount: float = 0.99
    episode_cap: int = 100
    value_loss_coef: float = 0.5
    optimizer: str = "adam"
    explicit: frozenset = field(default_factory=frozenset, compare=False)

    def train_config(self) -> agent.TrainConfig:
        return agent.TrainConfig(
            batch_steps=self.batch_steps,
            entropy_coef=self.entropy_coef,
            lr0=self.lr0,
            lr_decay=self.lr_decay,
            lr_decay_every=self.lr_decay_every,
            discount=self.discount,
            episode_cap=self.episode_cap,
            value_loss_coef=self.value_loss_coef,
            seed=self.seed,
            optimizer=self.optimizer,
        )


def _parse_algs(value):
    algs = tuple(a.strip() for a in value.split(",") if a.strip())
    for a in algs:
        if a not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm '{a}' (choose from {', '.join(ALGORITHMS)})")
    if not algs:
        raise ConfigError("algs must name at least one algorithm")
    return algs


# config-file key -> (ExperimentConfig field, parser)
CONFIG_KEYS = {
    "K": ("num_users", int),
    "N": ("num_files", int),
    "M": ("cache_files", int),
    "F": ("file_bits", int),
    "seed": ("seed", int),
    "iterations": ("iterations", int),
    "eval_episodes": ("eval_episodes", int),
    "algs": ("algorithms", _parse_algs),
    "out": ("out_dir", str),
    "checkpoint": ("checkpoint", str),
    "prefetch": ("prefetch", str),
    "vertex_budget": ("vertex_budget", int),
    "k_min": ("k_min", int),
    "k_max": ("k_max", int),
    "reps": ("reps", int),
    "batch_steps": ("batch_steps", int),
    "entropy_coef": ("entropy_coef", float),
    "lr0": ("lr0", float),
    "lr_decay": ("lr_decay", float),
    "lr_decay_every": ("lr_decay_every", int),
    "discount": ("discount", float),
    "episode_cap": ("episode_cap", int),
    "value_loss_coef": ("value_loss_coef", float),
    "optimizer": ("optimizer", str),
}


def _read_config_file(path):
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got '{line}'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in CONFIG_KEYS:
                raise ConfigError(f"unknown config key: {key}")
            if key in values:
                raise ConfigError(f"duplicate config key: {key}")
            values[key] = value
    return values


def parse_config(path=None, overrides=None) -> ExperimentConfig:
    """Build a validated ExperimentConfig from a file plus flag overrides."""
    raw = _read_config_file(path) if path else {}
    if overrides:
        for key, value in overrides.items():
            if key not in CONFIG_KEYS:
                raise ConfigError(f"unknown config key: {key}")
            if value is not None:
                raw[key] = value
    config = ExperimentConfig()
    explicit = set()
    for key, value in raw.items():
        attr, parse = CONFIG_KEYS[key]
        if isinstance(value, str):
            try:
                value = parse(value)
            except ConfigError:
                raise
            except ValueError:
                raise ConfigError(f"invalid value for config key {key}: '{value}'") from None
        setattr(config, attr, value)
        explicit.add(key)
    config.explicit = frozenset(explicit)
    _validate(config)
    return config


def _validate(config):
    if config.num_users < 1:
        raise ConfigError("K must be >= 1")
    if config.num_files < 1:
        raise ConfigError("N must be >= 1")
    if config.file_bits < 1:
        raise ConfigError("F must be >= 1")
    if config.cache_files < 0:
        raise ConfigError("M must be >= 0")
    if config.cache_files > config.num_files:
        raise ConfigError(
            f"cache exceeds library (M={config.cache_files} > N={config.num_files})"
        )
    if config.num_users > config.num_files:
        raise ConfigError(
            f"distinct demands impossible (K={config.num_users} > N={config.num_files})"
        )
    if config.seed < 0:
        raise ConfigError("seed must be >= 0")
    if config.iterations < 1:
        raise ConfigError("iterations must be >= 1")
    if config.eval_episodes < 1:
        raise ConfigError("eval_episodes must be >= 1")
    if config.prefetch not in ("random", "segments"):
        raise ConfigError(f"prefetch must be 'random' or 'segments', not '{config.prefetch}'")
    if config.prefetch == "segments":
        if config.num_files != config.num_users:
            raise ConfigError("prefetch = segments requires N == K")
        if config.file_bits % config.num_users != 0:
            raise ConfigError("prefetch = segments requires F divisible by K")
    if config.k_min < 1 or config.k_max < config.k_min:
        raise ConfigError("bench range requires 1 <= k_min <= k_max")
    if config.reps < 1:
        raise ConfigError("reps must be >= 1")
    if isinstance(config.algorithms, str):
        config.algorithms = _parse_algs(config.algorithms)
    try:
        config.train_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def make_sampler(config):
    """Instance sampler for training/eval, already pruned to N == K."""
    n, k = config.num_files, config.num_users
    f, m = config.file_bits, config.cache_files
    if config.prefetch == "segments":
        instance = ProblemInstance(n, k, f, m)
        cache = segment_prefetch(instance)

        def sampler(rng):
            demands = tuple(int(d) for d in rng.permutation(k))
            return instance, cache, demands

        return sampler
    return lambda rng: random_instance(n, k, f, m, rng)


def _instance_stream(config, seed, count):
    rng = np.random.default_rng(seed)
    sampler = make_sampler(config)
    return [sampler(rng) for _ in range(count)]


def _write_csv(path, header, rows):
    """Atomic CSV write: temp file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x):
    return repr(float(x))


def run_train(config) -> int:
    """Train an agent; writes training_curve.csv and checkpoint.txt."""
    sampler = make_sampler(config)
    params, records = agent.train(sampler, config.train_config(), config.iterations)
    os.makedirs(config.out_dir, exist_ok=True)
    curve_path = os.path.join(config.out_dir, "training_curve.csv")
    _write_csv(
        curve_path,
        ["iteration", "mean_delay", "mean_reward", "mean_entropy", "lr"],
        [
            [r.iteration, _fmt(r.mean_delay), _fmt(r.mean_reward), _fmt(r.mean_entropy), _fmt(r.lr)]
            for r in records
        ],
    )
    ckpt_path = os.path.join(config.out_dir, "checkpoint.txt")
    agent.save_checkpoint(params, ckpt_path)
    last = records[-1]
    print(f"trained {config.iterations} iterations "
          f"(final mean delay {last.mean_delay:.4f}, mean reward {last.mean_reward:.4f})")
    print(f"wrote {curve_path} and {ckpt_path}")
    return EXIT_OK


def _load_agent(config):
    if not config.checkpoint:
        raise ConfigError("this command needs --checkpoint")
    if not os.path.exists(config.checkpoint):
        raise ConfigError(f"checkpoint not found: {config.checkpoint}")
    params = agent.load_checkpoint(config.checkpoint)
    if (params.num_users, params.file_bits) != (config.num_users, config.file_bits):
        raise ConfigError(
            f"checkpoint was trained for K={params.num_users}, F={params.file_bits}; "
            f"config asks for K={config.num_users}, F={config.file_bits}"
        )
    return params


def run_eval(config) -> int:
    """Evaluate a checkpoint over eval_episodes fresh instances; writes eval.csv."""
    params = _load_agent(config)
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    instances = _instance_stream(config, seeds[0], config.eval_episodes)
    mean, results = agent.evaluate(
        params, instances, mode="greedy",
        rng=np.random.default_rng(seeds[1]), episode_cap=config.episode_cap,
    )
    os.makedirs(config.out_dir, exist_ok=True)
    path = os.path.join(config.out_dir, "eval.csv")
    _write_csv(
        path,
        ["instance", "delay", "capped"],
        [[i, _fmt(r.delay), int(r.capped)] for i, r in enumerate(results)],
    )
    delays = np.array([r.delay for r in results])
    print(f"mean normalized delay {mean:.4f} (std {delays.std():.4f}) "
          f"over {len(results)} episodes; wrote {path}")
    return EXIT_OK


def _baseline_schedule(name, instance, cache, demands, vertex_budget):
    if name == "uncoded":
        return baselines.uncoded_delivery(instance, cache, demands)
    if name == "gcm":
        return baselines.gcm_delivery(instance, cache, demands)
    requests = baselines.outstanding_bits(instance, cache, demands)
    graph = baselines.build_side_info_graph(instance, cache, requests)
    if name == "greedy":
        return baselines.greedy_clique_cover(graph)
    if name == "oracle":
        return baselines.exact_min_clique_cover(graph, vertex_budget)
    raise ValueError(f"unknown baseline {name}")


def run_compare(config) -> int:
    """Paired comparison of the configured algorithms; writes compare.csv."""
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    instances = _instance_stream(config, seeds[0], config.eval_episodes)
    rows = []
    for name in config.algorithms:
        start = time.perf_counter()
        if name == "agent":
            params = _load_agent(config)
            mean, results = agent.evaluate(
                params, instances, mode="greedy",
                rng=np.random.default_rng(seeds[1]), episode_cap=config.episode_cap,
            )
            delays = np.array([r.delay for r in results])
            capped = float(np.mean([r.capped for r in results]))
        else:
            if name == "oracle":
                oversize = _max_vertices(instances) > config.vertex_budget
                if oversize:
                    rows.append([name, "skipped", "skipped", _fmt(0.0), _fmt(0.0)])
                    continue
            delays = np.array([
                baselines.schedule_delay(
                    _baseline_schedule(name, inst, cache, demands, config.vertex_budget),
                    inst.file_bits,
                )
                for inst, cache, demands in instances
            ])
            capped = 0.0
        seconds = time.perf_counter() - start
        rows.append([name, _fmt(delays.mean()), _fmt(delays.std()), _fmt(capped), _fmt(seconds)])
    os.makedirs(config.out_dir, exist_ok=True)
    path = os.path.join(config.out_dir, "compare.csv")
    _write_csv(path, ["algorithm", "mean_delay", "std_delay", "capped_frac", "seconds"], rows)
    for row in rows:
        print(f"{row[0]:>8}: mean delay {row[1]}")
    print(f"wrote {path}")
    return EXIT_OK


def _max_vertices(instances):
    return max(
        int(baselines.outstanding_bits(inst, cache, demands).sum())
        for inst, cache, demands in instances
    )


def run_bench_runtime(config) -> int:
    """Median per-K runtimes of agent inference vs greedy/oracle construction.

    Agent episodes use freshly initialized weights (per-step cost does not
    depend on the values) in greedy mode.  The oracle is skipped for any K
    where no sampled instance fits the vertex budget; the reps column
    records how many instances each median was taken over.
    """
    if "M" not in config.explicit:
        config.cache_files = 3
    rows = []
    for k in range(config.k_min, config.k_max + 1):
        if config.cache_files > k:
            raise ConfigError(
                f"cache exceeds library (M={config.cache_files} > N={k}) at bench K={k}"
            )
        bench_cfg = ExperimentConfig(
            num_users=k, num_files=k,
            cache_files=config.cache_files, file_bits=config.file_bits,
        )
        seeds = np.random.SeedSequence((config.seed, k)).spawn(3)
        instances = _instance_stream(bench_cfg, seeds[0], config.reps)
        init_rng = np.random.default_rng(seeds[1])
        params = agent.init_params(k, k, config.file_bits, init_rng)
        eval_rng = np.random.default_rng(seeds[2])

        agent_times = []
        for triple in instances:
            start = time.perf_counter()
            agent.evaluate(params, [triple], mode="greedy",
                           rng=eval_rng, episode_cap=config.episode_cap)
            agent_times.append(time.perf_counter() - start)
        rows.append([k, "agent", _fmt(np.median(agent_times)), len(agent_times)])

        greedy_times = []
        oracle_times = []
        for inst, cache, demands in instances:
            requests = baselines.outstanding_bits(inst, cache, demands)
            start = time.perf_counter()
            graph = baselines.build_side_info_graph(inst, cache, requests)
            baselines.greedy_clique_cover(graph)
            greedy_times.append(time.perf_counter() - start)
            if len(graph.vertices) <= config.vertex_budget:
                start = time.perf_counter()
                graph = baselines.build_side_info_graph(inst, cache, requests)
                baselines.exact_min_clique_cover(graph, config.vertex_budget)
                oracle_times.append(time.perf_counter() - start)
        rows.append([k, "greedy", _fmt(np.median(greedy_times)), len(greedy_times)])
        if oracle_times:
            rows.append([k, "oracle", _fmt(np.median(oracle_times)), len(oracle_times)])
    os.makedirs(config.out_dir, exist_ok=True)
    path = os.path.join(config.out_dir, "runtime.csv")
    _write_csv(path, ["K", "algorithm", "median_seconds", "reps"], rows)
    for row in rows:
        print(f"K={row[0]} {row[1]:>7}: {float(row[2]):.3e} s (over {row[3]})")
    print(f"wrote {path}")
    return EXIT_OK


def emit_trace(config) -> int:
    """Run one greedy agent episode and dump its per-step trace as JSON lines."""
    params = _load_agent(config)
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    (instance, cache, demands), = _instance_stream(config, seeds[0], 1)
    rng = np.random.default_rng(seeds[1])
    state = env.reset(instance, cache, demands, rng, config.episode_cap)
    outcomes = []
    while not state.done:
        probs = agent.forward_actor(params, env.observe(state))
        _, outcome = env.step(state, agent.greedy_action(probs), rng)
        outcomes.append(outcome)
    os.makedirs(config.out_dir, exist_ok=True)
    path = os.path.join(config.out_dir, "trace.jsonl")
    env.write_trace(path, env.episode_records(outcomes))
    delay = env.normalized_delay(state)
    print(f"episode finished in {state.step_count} steps "
          f"(normalized delay {delay.delay:.4f}, capped={delay.capped}); wrote {path}")
    return EXIT_OK


def _add_common_flags(sub):
    sub.add_argument("--config", metavar="PATH", help="plain-text key = value config file")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--out", metavar="DIR", help="output directory")
    sub.add_argument("--K", type=int, help="number of users")
    sub.add_argument("--N", type=int, help="number of library files")
    sub.add_argument("--M", type=int, help="cache size in files per user")
    sub.add_argument("--F", type=int, help="bits per file")
    sub.add_argument("--algs", help="comma list from: " + ", ".join(ALGORITHMS))
    sub.add_argument("--iterations", type=int)
    sub.add_argument("--eval-episodes", type=int, dest="eval_episodes")
    sub.add_argument("--checkpoint", metavar="PATH")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="codedcast",
        description="Coded-caching delivery lab: train and compare XOR delivery strategies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("train", "train the delivery agent, write training_curve.csv and checkpoint.txt"),
        ("eval", "evaluate a checkpoint, write eval.csv"),
        ("compare", "paired comparison of algorithms, write compare.csv"),
        ("bench", "runtime scaling benchmark over a range of K, write runtime.csv"),
        ("trace", "dump one greedy agent episode as JSON lines"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _add_common_flags(p)
        if name == "bench":
            p.add_argument("--k-min", type=int, dest="k_min")
            p.add_argument("--k-max", type=int, dest="k_max")
            p.add_argument("--reps", type=int)
    return parser


def _overrides_from_args(args):
    mapping = {
        "seed": args.seed, "out": args.out,
        "K": args.K, "N": args.N, "M": args.M, "F": args.F,
        "algs": args.algs, "iterations": args.iterations,
        "eval_episodes": args.eval_episodes, "checkpoint": args.checkpoint,
    }
    for key in ("k_min", "k_max", "reps"):
        if hasattr(args, key):
            mapping[key] = getattr(args, key)
    return mapping


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = _overrides_from_args(args)
        config = parse_config(args.config, overrides)
        if args.command == "train":
            return run_train(config)
        if args.command == "eval":
            return run_eval(config)
        if args.command == "compare":
            return run_compare(config)
        if args.command == "bench":
            return run_bench_runtime(config)
        if args.command == "trace":
            return emit_trace(config)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except agent.TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except Exception as exc:  # runtime failures map to one distinct code
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def console_main():
    sys.exit(main())


if __name__ == "__main__":
    console_main()
