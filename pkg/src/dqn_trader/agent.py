"""DQN trading agent with a temperature-normalized expected-SARSA target."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .environment import EnvConfig, TradeAction, TradingEnv
from .preprocessing import BlockStream
from .qnet import DEFAULT_CONV, DEFAULT_FC_UNITS, QNetwork, make_optimizer, sync_target

logger = logging.getLogger(__name__)

TEMPERATURE_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainingConfig:
    number_of_assets: int = 8
    window_size: int = 30
    memory_size: int = 100_000
    discount_factor: float = 0.99
    minibatch_size: int = 32
    update_frequency: int = 4
    initial_exploration: float = 1.0
    final_exploration: float = 0.1
    exploration_annealing_length: int = 1_000_000
    update_start_size: int = 20_000
    target_network_update_frequency: int = 20_000
    hyper_temperature: float = 0.25
    epochs: int = 1
    seed: int = 0
    optimizer: str = "rmsprop"
    learning_rate: float = 0.00025
    rmsprop_decay: float = 0.95
    rmsprop_epsilon: float = 0.01
    td_error_clip: float = 0.0  # 0 disables
    output_activation: str = "sigmoid"
    conv_layers: tuple = tuple(str(c) for c in DEFAULT_CONV)
    fc_units: int = DEFAULT_FC_UNITS

    def __post_init__(self):
        positive = (
            "number_of_assets", "window_size", "memory_size", "discount_factor", "minibatch_size",
            "update_frequency", "initial_exploration", "exploration_annealing_length",
            "target_network_update_frequency", "hyper_temperature", "epochs", "learning_rate", "fc_units",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not 0 <= self.final_exploration <= self.initial_exploration <= 1:
            raise ValueError("need 0 <= final_exploration <= initial_exploration <= 1")
        if not 0 < self.discount_factor <= 1:
            raise ValueError("discount_factor must be in (0, 1]")
        if self.update_start_size < 0 or self.seed < 0 or self.td_error_clip < 0:
            raise ValueError("update_start_size, seed and td_error_clip must be >= 0")
        if self.optimizer not in ("rmsprop", "sgd"):
            raise ValueError("optimizer must be 'rmsprop' or 'sgd'")
        if self.output_activation not in ("sigmoid", "linear"):
            raise ValueError("output_activation must be 'sigmoid' or 'linear'")
        if not 0 < self.rmsprop_decay < 1 or not self.rmsprop_epsilon > 0:
            raise ValueError("rmsprop_decay must be in (0, 1) and rmsprop_epsilon > 0")
        object.__setattr__(self, "conv_layers", tuple(str(c) for c in self.conv_layers))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_layers"] = list(self.conv_layers)
        return d


@dataclass
class EpsilonSchedule:
    initial: float = 1.0
    final: float = 0.1
    annealing_steps: int = 1_000_000
    current_step: int = 0

    def value(self, step: int | None = None) -> float:
        step = self.current_step if step is None else step
        frac = min(step / self.annealing_steps, 1.0)
        return self.initial - (self.initial - self.final) * frac

    def advance(self) -> float:
        eps = self.value()
        self.current_step += 1
        return eps


@dataclass(frozen=True)
class Experience:
    state_index: int
    action_id: int
    reward: float
    next_state_index: int
    done: bool


class ReplayBuffer:
    """Fixed-capacity FIFO of transitions, stored column-wise."""

    def __init__(self, capacity: int = 100_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.state = np.zeros(capacity, np.int64)
        self.action = np.zeros(capacity, np.int64)
        self.reward = np.zeros(capacity)
        self.next_state = np.zeros(capacity, np.int64)
        self.done = np.zeros(capacity, bool)
        self.size = 0
        self._head = 0

    def __len__(self) -> int:
        return self.size

    def push(self, exp: Experience) -> None:
        i = self._head
        self.state[i] = exp.state_index
        self.action[i] = exp.action_id
        self.reward[i] = exp.reward
        self.next_state[i] = exp.next_state_index
        self.done[i] = exp.done
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def __iter__(self):
        start = self._head if self.size == self.capacity else 0
        for k in range(self.size):
            i = (start + k) % self.capacity
            yield Experience(int(self.state[i]), int(self.action[i]), float(self.reward[i]),
                             int(self.next_state[i]), bool(self.done[i]))

    def sample(self, batch_size: int, rng: np.random.Generator):
        """Uniform draw with replacement -> (states, actions, rewards, next_states, dones)."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, batch_size)
        return self.state[idx], self.action[idx], self.reward[idx], self.next_state[idx], self.done[idx]


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def select_action(q_values, epsilon: float, rng: np.random.Generator) -> TradeAction:
    """Epsilon-greedy action; its ratio is the softmax weight of the chosen q-value."""
    q = np.asarray(q_values, dtype=np.float64)
    if q.ndim != 1 or q.size == 0:
        raise ValueError("q_values must be a non-empty vector")
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must be in [0, 1]")
    if epsilon > 0 and rng.random() < epsilon:
        a = int(rng.integers(q.size))
    else:
        a = int(np.argmax(q))
    sigma = float(softmax(q)[a])
    return TradeAction.from_id(a, sigma)


def normalized_temperature(q_next, hyper_temperature: float):
    """``mean(|q|) * hyper_temperature`` along the last axis, floored above zero."""
    if not hyper_temperature > 0:
        raise ValueError("hyper_temperature must be > 0")
    q = np.asarray(q_next, dtype=np.float64)
    if q.shape[-1] == 0:
        raise ValueError("empty q-vector")
    tau = np.abs(q).mean(axis=-1) * hyper_temperature
    return np.maximum(tau, TEMPERATURE_FLOOR)


def target_policy(q_next, hyper_temperature: float) -> np.ndarray:
    q = np.asarray(q_next, dtype=np.float64)
    tau = normalized_temperature(q, hyper_temperature)
    return softmax(q / np.expand_dims(tau, -1))


def compute_target(reward, q_next, done, gamma: float, hyper_temperature: float):
    """Expected-SARSA target under the temperature-normalized softmax policy.

    Vectorized: ``q_next`` may be ``(n_actions,)`` or ``(batch, n_actions)``.
    Terminal transitions return the reward alone.
    """
    q = np.asarray(q_next, dtype=np.float64)
    if not np.all(np.isfinite(q)) or not np.all(np.isfinite(reward)):
        raise FloatingPointError("non-finite input to compute_target")
    pi = target_policy(q, hyper_temperature)
    expected = (pi * q).sum(axis=-1)
    target = np.asarray(reward, dtype=np.float64) + gamma * np.where(done, 0.0, expected)
    return float(target) if target.ndim == 0 else target


def build_network(config: TrainingConfig, n_assets: int, seed: int | None = None) -> QNetwork:
    return QNetwork(
        input_shape=(config.window_size, n_assets, 9),
        conv_layers=config.conv_layers,
        fc_units=config.fc_units,
        output_activation=config.output_activation,
        seed=config.seed if seed is None else seed,
    )


@dataclass
class TrainingLog:
    step: list = field(default_factory=list)
    epsilon: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    reward: list = field(default_factory=list)
    total_value: list = field(default_factory=list)

    def append(self, step, epsilon, loss, reward, total_value):
        self.step.append(step)
        self.epsilon.append(epsilon)
        self.loss.append(loss)
        self.reward.append(reward)
        self.total_value.append(total_value)

    def __len__(self) -> int:
        return len(self.step)

    def losses(self) -> np.ndarray:
        """Losses of the steps that ran an update."""
        return np.array([v for v in self.loss if v is not None])

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["step", "epsilon", "loss", "reward", "total_value"])
            for row in zip(self.step, self.epsilon, self.loss, self.reward, self.total_value):
                writer.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in row])
        return path


class DQNAgent:
    """Online/target networks, replay memory and the update rule."""

    def __init__(self, config: TrainingConfig, n_assets: int, net: QNetwork | None = None):
        self.config = config
        seeds = np.random.SeedSequence(config.seed).spawn(2)
        self.rng = np.random.default_rng(seeds[0])
        init_seed = int(seeds[1].generate_state(1)[0])
        self.online = net if net is not None else build_network(config, n_assets, seed=init_seed)
        self.target = sync_target(self.online)
        self.optimizer = make_optimizer(
            config.optimizer, config.learning_rate, config.rmsprop_decay, config.rmsprop_epsilon
        )
        self.buffer = ReplayBuffer(config.memory_size)
        self.schedule = EpsilonSchedule(
            config.initial_exploration, config.final_exploration, config.exploration_annealing_length
        )
        self.n_updates = 0
        self._q_cache: dict = {}

    def act(self, block, epsilon: float) -> TradeAction:
        return select_action(self.online.forward(block), epsilon, self.rng)

    def greedy_q(self, stream: BlockStream, state: int, lookahead: int) -> np.ndarray:
        """Online q-values for ``state``; batches the next ``lookahead`` states.

        Prices do not react to actions, so upcoming states are known and their
        q-values stay valid until the next parameter update clears the cache.
        """
        if state not in self._q_cache:
            idx = list(range(state, min(state + lookahead, stream.last_index + 1)))
            self._q_cache = dict(zip(idx, self.online.forward(stream.blocks(idx))))
        return self._q_cache[state]

    def learn(self, stream: BlockStream) -> float:
        cfg = self.config
        s, a, r, s2, done = self.buffer.sample(cfg.minibatch_size, self.rng)
        q_next = self.target.forward(stream.blocks(s2))
        y = compute_target(r, q_next, done, cfg.discount_factor, cfg.hyper_temperature)
        q = self.online.forward(stream.blocks(s))
        td = y - q[np.arange(len(a)), a]
        loss = float(np.mean(0.5 * td**2))
        if cfg.td_error_clip > 0:
            td = np.clip(td, -cfg.td_error_clip, cfg.td_error_clip)
        grads = self.online.backward(a, td)
        self.optimizer.step(self.online.params(), grads)
        self._q_cache = {}
        self.n_updates += 1
        return loss

    def sync(self) -> None:
        sync_target(self.online, self.target)


def train(
    stream: BlockStream,
    env_config: EnvConfig | None = None,
    config: TrainingConfig | None = None,
    agent: DQNAgent | None = None,
) -> tuple[QNetwork, TrainingLog]:
    """Run ``config.epochs`` passes over ``stream`` and return the online network and step log."""
    config = config or TrainingConfig()
    n_assets = stream.dataset.n_assets
    if len(stream) < 2:
        raise ValueError("stream needs at least two blocks to take a step")
    agent = agent or DQNAgent(config, n_assets)
    env = TradingEnv(stream, env_config)
    log = TrainingLog()
    step = 0
    for epoch in range(config.epochs):
        state, _ = env.reset()
        done = False
        while not done:
            eps = agent.schedule.advance()
            # steps until the next possible update bound how far ahead q-values stay valid
            ahead = config.update_frequency - step % config.update_frequency
            if step + ahead < config.update_start_size:
                ahead = config.update_start_size - step
            q = agent.greedy_q(stream, state, min(ahead, 256))
            action = select_action(q, eps, agent.rng)
            result = env.step(action)
            agent.buffer.push(Experience(state, action.action_id, result.reward, result.next_state_index, result.done))
            step += 1
            loss = None
            if step >= config.update_start_size and step % config.update_frequency == 0:
                loss = agent.learn(stream)
            if step % config.target_network_update_frequency == 0:
                agent.sync()
            log.append(step, eps, loss, result.reward, result.total_value_after)
            state, done = result.next_state_index, result.done
        logger.info("epoch %d/%d: final value %.4f, updates %d", epoch + 1, config.epochs,
                    env.value, agent.n_updates)
    return agent.online, log


@dataclass
class PolicyRun:
    curve: np.ndarray  # total value per visited state, starting with the initial amount
    rows: list  # equity CSV rows, step 0 is the starting value
    actions: np.ndarray
    sigmas: np.ndarray
    noop_trades: int


def run_policy(
    net: QNetwork,
    stream: BlockStream,
    env_config: EnvConfig | None = None,
    epsilon: float = 0.0,
    seed: int = 0,
) -> PolicyRun:
    """Roll the network over ``stream`` without learning."""
    env = TradingEnv(stream, env_config)
    rng = np.random.default_rng(seed)
    state, _ = env.reset()
    values = [env.value]
    rows = [(0, stream.timestamp(state), None, None, None, values[0])]
    actions, sigmas = [], []
    step = 0
    done = env.done
    while not done:
        action = select_action(net.forward(stream.blocks([state])[0]), epsilon, rng)
        result = env.step(action)
        step += 1
        values.append(result.total_value_after)
        actions.append(action.action_id)
        sigmas.append(action.ratio)
        rows.append((step, stream.timestamp(result.next_state_index), action.action_id,
                     action.ratio, result.reward, result.total_value_after))
        state, done = result.next_state_index, result.done
    return PolicyRun(np.array(values), rows, np.array(actions, np.int64), np.array(sigmas), env.noop_trades)
