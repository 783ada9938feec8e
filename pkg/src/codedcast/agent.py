"""Actor-critic delivery agent: tiny tanh MLPs, hand-written backprop, Adam.

The actor maps the 3*N*K*F observation to one Bernoulli selection
probability per library bit (factored action head); the critic maps the
same observation to a scalar value baseline.  Training is batched policy
gradient with an entropy bonus: each iteration rolls out exactly
batch_steps environment steps (episodes reset as they finish, the
in-flight episode carries over to the next batch), computes discounted
returns per episode, and takes one optimizer step.
"""

import math
from dataclasses import dataclass

import numpy as np

from codedcast import env, kernels

HIDDEN = 32          # two hidden layers of this width
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingDiverged(Exception):
    """Raised when the loss or parameters stop being finite."""


@dataclass
class PolicyParams:
    """Actor and critic weights plus optimizer state.

    Weight matrices are (fan_in, fan_out); each network is
    [w1, b1, w2, b2, w3, b3].  adam_m / adam_v line up with
    actor + critic concatenated.
    """

    num_files: int
    num_users: int
    file_bits: int
    hidden: int
    actor: list
    critic: list
    adam_m: list
    adam_v: list
    iteration: int = 0

    @property
    def obs_dim(self) -> int:
        return 3 * self.num_files * self.num_users * self.file_bits

    @property
    def action_dim(self) -> int:
        return self.num_files * self.file_bits


@dataclass
class TrainConfig:
    batch_steps: int = 500
    entropy_coef: float = 0.05
    lr0: float = 5e-3
    lr_decay: float = 0.9
    lr_decay_every: int = 100
    discount: float = 0.99
    episode_cap: int = 100
    value_loss_coef: float = 0.5
    seed: int = 0
    optimizer: str = "adam"      # "adam" or "sgd" (ablation)
    hidden: int = HIDDEN

    def __post_init__(self):
        if self.batch_steps < 1:
            raise ValueError("batch_steps must be >= 1")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.entropy_coef < 0:
            raise ValueError("entropy_coef must be >= 0")
        if not 0 < self.discount <= 1:
            raise ValueError("discount must lie in (0, 1]")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrajectoryBatch:
    """Fixed-size slice of consecutive rollout steps.

    dones marks steps that ended their episode; tail_value is the critic
    estimate of the state following the last step (0 when that step was
    terminal) so the trailing partial episode can bootstrap its return.
    """

    obs: np.ndarray          # (B, obs_dim) float64
    actions: np.ndarray      # (B, action_dim) uint8
    rewards: np.ndarray      # (B,)
    dones: np.ndarray        # (B,) bool
    tail_value: float = 0.0

    def __len__(self):
        return self.obs.shape[0]


@dataclass
class LossBreakdown:
    total: float
    policy: float
    value: float
    entropy: float           # mean per-step policy entropy (nats), before weighting


@dataclass
class TrainRecord:
    iteration: int
    mean_delay: float
    mean_reward: float
    mean_entropy: float
    lr: float


def init_params(num_files, num_users, file_bits, rng, hidden=HIDDEN) -> PolicyParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases."""
    obs_dim = 3 * num_files * num_users * file_bits
    act_dim = num_files * file_bits

    def layer(fan_in, fan_out):
        bound = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        return w, np.zeros(fan_out)

    def network(out_dim):
        w1, b1 = layer(obs_dim, hidden)
        w2, b2 = layer(hidden, hidden)
        w3, b3 = layer(hidden, out_dim)
        return [w1, b1, w2, b2, w3, b3]

    actor = network(act_dim)
    critic = network(1)
    zeros = [np.zeros_like(p) for p in actor + critic]
    return PolicyParams(
        num_files=num_files,
        num_users=num_users,
        file_bits=file_bits,
        hidden=hidden,
        actor=actor,
        critic=critic,
        adam_m=zeros,
        adam_v=[np.zeros_like(p) for p in actor + critic],
    )


def _check_obs(params, obs):
    obs = np.ascontiguousarray(obs, dtype=np.float64)
    if obs.shape != (params.obs_dim,):
        raise ValueError(f"observation must have shape ({params.obs_dim},), got {obs.shape}")
    return obs


def forward_actor(params, obs) -> np.ndarray:
    """Per-bit selection probabilities, each strictly inside (0, 1)."""
    return kernels.actor_probs(_check_obs(params, obs), *params.actor)


def forward_critic(params, obs) -> float:
    return kernels.critic_value(_check_obs(params, obs), *params.critic)


def sample_action(probs, rng) -> np.ndarray:
    """Independent Bernoulli draw per bit."""
    return (rng.random(probs.shape) < probs).astype(np.uint8)


def greedy_action(probs) -> np.ndarray:
    return (probs > 0.5).astype(np.uint8)


def _mlp_forward_batch(net, x):
    w1, b1, w2, b2, w3, b3 = net
    h1 = np.tanh(x @ w1 + b1)
    h2 = np.tanh(h1 @ w2 + b2)
    return h1, h2, h2 @ w3 + b3


def _mlp_backward_batch(net, x, h1, h2, dout):
    _, _, w2, _, w3, _ = net
    dw3 = h2.T @ dout
    db3 = dout.sum(axis=0)
    dh2 = dout @ w3.T
    dz2 = dh2 * (1.0 - h2 * h2)
    dw2 = h1.T @ dz2
    db2 = dz2.sum(axis=0)
    dh1 = dz2 @ w2.T
    dz1 = dh1 * (1.0 - h1 * h1)
    dw1 = x.T @ dz1
    db1 = dz1.sum(axis=0)
    return [dw1, db1, dw2, db2, dw3, db3]


def compute_returns_and_advantages(batch, params, discount):
    """Discounted within-episode returns and return-minus-baseline advantages.

    The trailing partial episode (last step not done) bootstraps from
    batch.tail_value, which was frozen at collection time.
    """
    rewards = batch.rewards
    dones = batch.dones
    returns = np.empty(len(batch))
    running = batch.tail_value
    for t in range(len(batch) - 1, -1, -1):
        if dones[t]:
            running = 0.0
        running = rewards[t] + discount * running
        returns[t] = running
    _, _, values = _mlp_forward_batch(params.critic, batch.obs)
    return returns, returns - values[:, 0]


def loss_given_targets(params, batch, returns, advantages, config):
    """Loss and exact gradients with returns/advantages held constant.

    loss = -(1/B) sum_t adv_t * log pi(a_t | o_t)
           + value_loss_coef * (1/B) sum_t (return_t - V(o_t))^2
           - entropy_coef * (1/B) sum_t H(pi(. | o_t))

    where log pi factors over bits and H sums per-bit Bernoulli entropies.
    """
    nb = len(batch)
    if nb == 0:
        raise ValueError("batch must be non-empty")
    x = batch.obs
    a = batch.actions.astype(np.float64)

    ah1, ah2, z = _mlp_forward_batch(params.actor, x)
    p = 0.5 * (1.0 + np.tanh(0.5 * z))
    softplus = np.logaddexp(0.0, z)
    log_pi = a * z - softplus                     # (B, act_dim)
    entropy_per_step = (softplus - z * p).sum(axis=1)

    policy_loss = -(advantages[:, None] * log_pi).sum() / nb
    entropy_mean = entropy_per_step.sum() / nb

    ch1, ch2, v = _mlp_forward_batch(params.critic, x)
    v = v[:, 0]
    verr = returns - v
    value_loss = config.value_loss_coef * (verr * verr).sum() / nb

    total = policy_loss + value_loss - config.entropy_coef * entropy_mean
    if not math.isfinite(total):
        raise TrainingDiverged(
            f"non-finite loss (policy={policy_loss}, value={value_loss}, entropy={entropy_mean})"
        )

    # d(total)/dz: policy term contributes -(adv * (a - p)) / B,
    # the entropy bonus contributes +entropy_coef * z * p * (1-p) / B
    dz = (-(advantages[:, None] * (a - p)) + config.entropy_coef * z * p * (1.0 - p)) / nb
    actor_grads = _mlp_backward_batch(params.actor, x, ah1, ah2, dz)
    dv = (-2.0 * config.value_loss_coef / nb) * verr
    critic_grads = _mlp_backward_batch(params.critic, x, ch1, ch2, dv[:, None])

    breakdown = LossBreakdown(
        total=float(total),
        policy=float(policy_loss),
        value=float(value_loss),
        entropy=float(entropy_mean),
    )
    return breakdown, (actor_grads, critic_grads)


def loss_and_gradients(params, batch, config):
    """Policy-gradient loss over one batch; advantages are constants in the policy term."""
    returns, advantages = compute_returns_and_advantages(batch, params, config.discount)
    return loss_given_targets(params, batch, returns, advantages, config)


def lr_schedule(iteration, base=5e-3, decay=0.9, every=100) -> float:
    """Step-exponential schedule: base * decay ** (iteration // every)."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    return base * decay ** (iteration // every)


def update(params, grads, lr, config) -> PolicyParams:
    """One in-place optimizer step; increments the iteration counter."""
    actor_grads, critic_grads = grads
    flat_params = params.actor + params.critic
    flat_grads = actor_grads + critic_grads
    t = params.iteration + 1
    if config.optimizer == "adam":
        bc1 = 1.0 - ADAM_BETA1 ** t
        bc2 = 1.0 - ADAM_BETA2 ** t
        for w, g, m, v in zip(flat_params, flat_grads, params.adam_m, params.adam_v):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * (g * g)
            w -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    else:
        for w, g in zip(flat_params, flat_grads):
            w -= lr * g
    for w in flat_params:
        if not np.isfinite(w).all():
            raise TrainingDiverged("non-finite parameter after optimizer step")
    params.iteration = t
    return params


def train(sampler, config: TrainConfig, iterations, rng=None):
    """Run the batched actor-critic loop.

    sampler(rng) must yield (instance, cache, demands) triples for pruned
    instances of fixed dimensions; a fresh one is drawn whenever an episode
    finishes.  Returns (params, [TrainRecord per iteration]).
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    params = None
    state = None
    empty_resets = 0
    records = []
    for it in range(iterations):
        obs_buf, act_buf, rew_buf, done_buf = [], [], [], []
        episode_delays = []
        while len(obs_buf) < config.batch_steps:
            if state is None or state.done:
                instance, cache, demands = sampler(rng)
                if params is None:
                    params = init_params(
                        instance.num_files, instance.num_users, instance.file_bits,
                        rng, hidden=config.hidden,
                    )
                state = env.reset(instance, cache, demands, rng, config.episode_cap)
                if state.done:
                    # nothing to deliver (full caches); note the 0-delay episode and move on
                    episode_delays.append(0.0)
                    empty_resets += 1
                    if empty_resets > 1000:
                        raise TrainingDiverged(
                            "sampler keeps producing episodes with nothing to deliver"
                        )
                    continue
                empty_resets = 0
            obs = env.observe(state)
            probs = forward_actor(params, obs)
            action = sample_action(probs, rng)
            _, outcome = env.step(state, action, rng)
            obs_buf.append(obs)
            act_buf.append(action)
            rew_buf.append(outcome.reward)
            done_buf.append(outcome.done)
            if outcome.done:
                episode_delays.append(env.normalized_delay(state).delay)
        tail = 0.0 if done_buf[-1] else forward_critic(params, env.observe(state))
        batch = TrajectoryBatch(
            obs=np.stack(obs_buf),
            actions=np.stack(act_buf),
            rewards=np.asarray(rew_buf, dtype=np.float64),
            dones=np.asarray(done_buf, dtype=bool),
            tail_value=tail,
        )
        breakdown, grads = loss_and_gradients(params, batch, config)
        lr = lr_schedule(params.iteration, config.lr0, config.lr_decay, config.lr_decay_every)
        update(params, grads, lr, config)
        records.append(TrainRecord(
            iteration=it,
            mean_delay=float(np.mean(episode_delays)) if episode_delays else float("nan"),
            mean_reward=float(batch.rewards.mean()),
            mean_entropy=breakdown.entropy,
            lr=lr,
        ))
    return params, records


def evaluate(params, instances, mode="greedy", rng=None,
             episode_cap=env.DEFAULT_EPISODE_CAP, uncoded_fallback=True):
    """Roll the policy over a list of (instance, cache, demands) triples.

    mode "greedy" selects every bit with probability > 0.5; "sample" draws
    stochastically.  Returns (mean normalized delay, [DelayResult per
    instance]).
    """
    if mode not in ("greedy", "sample"):
        raise ValueError(f"unknown evaluation mode {mode!r}")
    if rng is None:
        rng = np.random.default_rng(0)
    results = []
    for instance, cache, demands in instances:
        state = env.reset(instance, cache, demands, rng, episode_cap)
        while not state.done:
            probs = forward_actor(params, env.observe(state))
            if mode == "greedy":
                action = greedy_action(probs)
            else:
                action = sample_action(probs, rng)
            env.step(state, action, rng)
        results.append(env.normalized_delay(state, uncoded_fallback))
    mean = float(np.mean([r.delay for r in results])) if results else 0.0
    return mean, results


CHECKPOINT_MAGIC = "codedcast-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(params, path):
    """Versioned plain-text checkpoint.

    Header lines: magic+version, files, users, file_bits, hidden,
    iteration.  Then every value of actor [w1 row-major, b1, w2, b2, w3,
    b3], critic likewise, adam_m and adam_v in the same order, printed with
    17 significant digits (lossless for float64).
    """
    arrays = params.actor + params.critic + params.adam_m + params.adam_v
    with open(path, "w") as fh:
        fh.write(f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n")
        fh.write(f"files {params.num_files}\n")
        fh.write(f"users {params.num_users}\n")
        fh.write(f"file_bits {params.file_bits}\n")
        fh.write(f"hidden {params.hidden}\n")
        fh.write(f"iteration {params.iteration}\n")
        for arr in arrays:
            flat = arr.ravel()
            for start in range(0, flat.size, 8):
                fh.write(" ".join("%.17g" % x for x in flat[start:start + 8]) + "\n")


def load_checkpoint(path) -> PolicyParams:
    with open(path) as fh:
        first = fh.readline().split()
        if len(first) != 2 or first[0] != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        if int(first[1]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {first[1]}")
        header = {}
        for _ in range(5):
            key, value = fh.readline().split()
            header[key] = int(value)
        values = np.array(fh.read().split(), dtype=np.float64)
    rng = np.random.default_rng(0)   # shapes only; values overwritten below
    params = init_params(header["files"], header["users"], header["file_bits"],
                         rng, hidden=header["hidden"])
    params.iteration = header["iteration"]
    arrays = params.actor + params.critic + params.adam_m + params.adam_v
    expected = sum(a.size for a in arrays)
    if values.size != expected:
        raise ValueError(f"checkpoint holds {values.size} values, expected {expected}")
    pos = 0
    for arr in arrays:
        arr[...] = values[pos:pos + arr.size].reshape(arr.shape)
        pos += arr.size
    return params
