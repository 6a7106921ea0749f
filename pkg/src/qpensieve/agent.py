"""Preference-conditioned soft actor-critic with a Q-snapshot replay buffer.

Each gradient step draws a minibatch, builds the preference set ``W`` (the
episode preference plus ``n_lambda - 1`` uniform draws), updates both critics
on the scalarized soft Bellman residual, occasionally freezes critic 1 into the
snapshot ring, updates the actor against the best ``(snapshot, preference)``
candidate per sample, and finally moves the target critics towards the live
ones.

Setting ``n_lambda=1`` and ``snapshot_capacity=0`` recovers the plain
multi-objective SAC baseline.
"""

import csv
import hashlib
import io
import json
import os
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .envs import make_env
from .exceptions import ConfigError, InvalidArgumentError, InvalidStateError, NumericalError
from .momdp import as_weights, default_metric_grid, uniform_simplex_sample
from .neural import MLP, Adam, GaussianTanhActor, load_arrays, save_arrays
from .validation import check_discount, check_positive, check_positive_int, check_rng

STREAMS = ("env", "actor_init", "critic_init", "replay", "preference", "explore", "update", "eval")


def _w(pref):
    # internal fast path: preferences reaching here were validated at the entry points
    return pref.weights if hasattr(pref, "weights") else np.asarray(pref, dtype=float)


def seed_streams(seed):
    """Independent generators for each source of randomness, derived from one master seed."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(child) for name, child in zip(STREAMS, children)}


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_state: np.ndarray
    done: bool


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform minibatch sampling."""

    def __init__(self, capacity, obs_dim, act_dim, d):
        self.capacity = check_positive_int(capacity, "capacity")
        self.obs_dim, self.act_dim, self.d = obs_dim, act_dim, d
        # grow lazily so a 10^6 default does not allocate up front
        self._alloc = min(self.capacity, 4096)
        self.obs = np.zeros((self._alloc, obs_dim))
        self.actions = np.zeros((self._alloc, act_dim))
        self.rewards = np.zeros((self._alloc, d))
        self.next_obs = np.zeros((self._alloc, obs_dim))
        self.dones = np.zeros(self._alloc)
        self.size = 0
        self.cursor = 0

    def __len__(self):
        return self.size

    def _grow(self):
        new = min(self.capacity, 2 * self._alloc)
        for name in ("obs", "actions", "rewards", "next_obs", "dones"):
            old = getattr(self, name)
            arr = np.zeros((new,) + old.shape[1:])
            arr[: self._alloc] = old
            setattr(self, name, arr)
        self._alloc = new

    def add(self, obs, action, reward, next_obs, done):
        if self.cursor >= self._alloc:
            self._grow()
        i = self.cursor
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.dones[i] = float(done)
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def add_transition(self, tr):
        self.add(tr.state, tr.action, tr.reward, tr.next_state, tr.done)

    def sample_indices(self, rng, batch_size):
        if self.size == 0:
            raise InvalidStateError("cannot sample from an empty replay buffer")
        return rng.integers(0, self.size, size=batch_size)

    def sample(self, rng, batch_size):
        idx = self.sample_indices(rng, batch_size)
        return {
            "obs": self.obs[idx],
            "actions": self.actions[idx],
            "rewards": self.rewards[idx],
            "next_obs": self.next_obs[idx],
            "dones": self.dones[idx],
        }

    def to_arrays(self):
        n = self.size
        return {
            "replay.obs": self.obs[:n],
            "replay.actions": self.actions[:n],
            "replay.rewards": self.rewards[:n],
            "replay.next_obs": self.next_obs[:n],
            "replay.dones": self.dones[:n],
        }


@dataclass(frozen=True)
class Snapshot:
    critic: MLP
    pref: np.ndarray
    step: int


class QSnapshotBuffer:
    """FIFO ring of frozen critics, each tagged with its sampling preference and gradient step.

    A capacity of 0 disables the ring: pushes are ignored and it stays empty.
    """

    def __init__(self, capacity=4):
        if isinstance(capacity, bool) or not isinstance(capacity, (int, np.integer)) or capacity < 0:
            raise InvalidArgumentError(f"snapshot capacity must be a non-negative integer, got {capacity!r}")
        self.capacity = int(capacity)
        self._ring = deque(maxlen=self.capacity) if self.capacity else deque(maxlen=0)

    def __len__(self):
        return len(self._ring)

    def __iter__(self):
        return iter(self._ring)

    def __getitem__(self, i):
        return self._ring[i]

    def push(self, critic, pref, step):
        if self.capacity == 0:
            return
        w = np.array(as_weights(pref))
        w.setflags(write=False)
        self._ring.append(Snapshot(critic.frozen_copy(), w, int(step)))

    @property
    def nets(self):
        return [s.critic for s in self._ring]

    @property
    def steps(self):
        return [s.step for s in self._ring]


@dataclass
class AgentConfig:
    """Agent hyperparameters with the standard soft actor-critic defaults."""

    hidden: tuple = (256, 256)
    lr: float = 0.0003
    gamma: float = 0.99
    buffer_size: int = 1_000_000
    batch_size: int = 256
    tau: float = 0.005
    target_update_interval: int = 1
    gradient_steps: int = 1
    alpha: float = 0.2
    n_lambda: int = 5
    snapshot_capacity: int = 4
    snapshot_interval: int = 1000
    warmup_steps: int = 1000
    total_steps: int = 100_000
    eval_interval: int = 5000
    eval_episodes: int = 5
    eval_deterministic: bool = True
    checkpoint_interval: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self):
        bad = []

        def check(name, fn):
            try:
                fn(getattr(self, name), name)
            except InvalidArgumentError:
                bad.append(name)

        def non_negative_int(v, name):
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 0:
                raise InvalidArgumentError(name)

        def unit_interval(v, name):
            if not isinstance(v, (int, float)) or not 0.0 < v <= 1.0:
                raise InvalidArgumentError(name)

        for name in ("buffer_size", "batch_size", "target_update_interval", "gradient_steps", "n_lambda",
                     "snapshot_interval", "total_steps", "eval_interval", "eval_episodes"):
            check(name, check_positive_int)
        for name in ("snapshot_capacity", "warmup_steps", "checkpoint_interval"):
            check(name, non_negative_int)
        check("lr", check_positive)
        check("alpha", check_positive)
        check("tau", unit_interval)
        check("gamma", lambda v, n: check_discount(v))
        if not self.hidden or min(self.hidden) < 1:
            bad.append("hidden")
        if bad:
            raise ConfigError(f"invalid agent configuration keys: {', '.join(bad)}", keys=bad)

    def to_dict(self):
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        return out

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown agent configuration keys: {', '.join(unknown)}", keys=unknown)
        return cls(**data)

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


class AgentState:
    """Networks, optimizers and counters of one learner.

    Parameters
    ----------
    obs_dim, act_dim, d : int
        Observation width, action width and objective count.  The actor sees
        ``[obs, pref]`` and each critic sees ``[obs, action, pref]`` and
        outputs a ``d``-vector.
    """

    def __init__(self, obs_dim, act_dim, d, config, actor_rng, critic_rng):
        self.obs_dim, self.act_dim, self.d = obs_dim, act_dim, d
        self.config = config
        self.alpha = float(config.alpha)
        self.actor = GaussianTanhActor(obs_dim + d, act_dim, config.hidden, rng=actor_rng)
        sizes = (obs_dim + act_dim + d, *config.hidden, d)
        self.critics = [MLP(sizes, rng=critic_rng), MLP(sizes, rng=critic_rng)]
        self.targets = [c.copy() for c in self.critics]
        self.actor_opt = Adam(lr=config.lr)
        self.critic_opts = [Adam(lr=config.lr), Adam(lr=config.lr)]
        self.snapshots = QSnapshotBuffer(config.snapshot_capacity)
        self.grad_step = 0
        self.env_step = 0

    def actor_input(self, obs, pref):
        obs = np.atleast_2d(obs)
        return np.hstack([obs, np.broadcast_to(_w(pref), (obs.shape[0], self.d))])

    def critic_input(self, obs, actions, prefs):
        obs = np.atleast_2d(obs)
        return np.hstack([obs, actions, np.broadcast_to(prefs, (obs.shape[0], self.d))])

    def act(self, obs, pref, rng=None, deterministic=True):
        x = self.actor_input(obs, pref)
        if deterministic:
            return self.actor.deterministic(x)
        return self.actor.sample(x, rng=rng)[0]

    def to_arrays(self):
        arrays = {}
        arrays.update(self.actor.trunk.to_arrays("actor"))
        for i in range(2):
            arrays.update(self.critics[i].to_arrays(f"critic{i}"))
            arrays.update(self.targets[i].to_arrays(f"target{i}"))
            arrays.update(self.critic_opts[i].state_arrays(f"adam.critic{i}"))
        arrays.update(self.actor_opt.state_arrays("adam.actor"))
        for k, snap in enumerate(self.snapshots):
            arrays.update(snap.critic.to_arrays(f"snapshot{k}"))
            arrays[f"snapshot{k}.pref"] = snap.pref
        return arrays

    def meta(self):
        return {
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
            "d": self.d,
            "config": self.config.to_dict(),
            "grad_step": self.grad_step,
            "env_step": self.env_step,
            "adam_t": {"actor": self.actor_opt.t, "critic0": self.critic_opts[0].t, "critic1": self.critic_opts[1].t},
            "snapshot_steps": self.snapshots.steps,
        }

    @classmethod
    def from_arrays(cls, arrays, meta):
        config = AgentConfig.from_dict(meta["config"])
        state = cls(meta["obs_dim"], meta["act_dim"], meta["d"], config, None, None)
        state.actor.trunk.set_parameters([arrays[f"actor.{n}"] for n in state.actor.trunk.parameter_names()])
        names = state.critics[0].parameter_names()
        for i in range(2):
            state.critics[i].set_parameters([arrays[f"critic{i}.{n}"] for n in names])
            state.targets[i].set_parameters([arrays[f"target{i}.{n}"] for n in names])
            state.critic_opts[i].load_state_arrays(arrays, f"adam.critic{i}", len(names), meta["adam_t"][f"critic{i}"])
        n_actor = len(state.actor.parameters())
        state.actor_opt.load_state_arrays(arrays, "adam.actor", n_actor, meta["adam_t"]["actor"])
        for k, step in enumerate(meta["snapshot_steps"]):
            net = MLP(state.critics[0].sizes)
            net.set_parameters([arrays[f"snapshot{k}.{n}"] for n in names])
            state.snapshots.push(net, arrays[f"snapshot{k}.pref"], step)
        state.grad_step = meta["grad_step"]
        state.env_step = meta["env_step"]
        return state


def twin_min(q1, q2, pref):
    """Per sample, the full vector of whichever twin has the smaller scalarization."""
    w = _w(pref)
    pick_second = (q2 @ w) < (q1 @ w)
    return np.where(pick_second[:, None], q2, q1), pick_second


def critic_target(state, batch, pref, rng=None, noise=None):
    """Soft Bellman target ``r + gamma * (1 - done) * (Qbar(s', a') - alpha * log pi(a'|s') 1_d)``."""
    cfg = state.config
    x_next = state.actor_input(batch["next_obs"], pref)
    a_next, logp_next, _ = state.actor.sample(x_next, rng=rng, noise=noise)
    xq = state.critic_input(batch["next_obs"], a_next, _w(pref))
    q_next, _ = twin_min(state.targets[0].forward(xq), state.targets[1].forward(xq), pref)
    v_next = q_next - state.alpha * logp_next[:, None]
    return batch["rewards"] + cfg.gamma * (1.0 - batch["dones"])[:, None] * v_next


def critic_loss_and_grads(critic, x, pref, target):
    """Mean squared scalarized residual ``mean((pref · (Q(x) - target))^2)`` and its parameter gradients."""
    w = _w(pref)
    pred, cache = critic.forward_cached(x)
    resid = (pred - target) @ w
    loss = float(np.mean(resid**2))
    upstream = (2.0 / len(resid)) * resid[:, None] * w[None, :]
    grads, _ = critic.backward(cache, upstream)
    return loss, grads


def critic_update(state, batch, pref, rng=None, noise=None, target=None):
    """One Adam step on each twin; returns the mean pre-step loss over the twins."""
    if target is None:
        target = critic_target(state, batch, pref, rng=rng, noise=noise)
    x = state.critic_input(batch["obs"], batch["actions"], _w(pref))
    losses = []
    for critic, opt in zip(state.critics, state.critic_opts):
        loss, grads = critic_loss_and_grads(critic, x, pref, target)
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite critic loss at gradient step {state.grad_step}")
        opt.step(critic.parameters(), grads, names=critic.parameter_names())
        losses.append(loss)
    return float(np.mean(losses))


def candidate_scores(state, obs, actions, pref, W, snapshot_nets):
    """Scalarized value of every candidate for every sample.

    Returns ``(scores, owner)`` where ``scores`` has shape
    ``(n_sources, len(W), B)``: snapshots first (oldest first), then the live
    twin minimum.  ``owner`` gives, for the live source, which twin (0 or 1)
    attains the minimum.
    """
    w = _w(pref)
    B = obs.shape[0]
    n_w = len(W)
    prefs = np.repeat(np.array([_w(p) for p in W]), B, axis=0)
    x = np.hstack([np.tile(obs, (n_w, 1)), np.tile(actions, (n_w, 1)), prefs])
    scores = [(net.forward(x) @ w).reshape(n_w, B) for net in snapshot_nets]
    s1 = (state.critics[0].forward(x) @ w).reshape(n_w, B)
    s2 = (state.critics[1].forward(x) @ w).reshape(n_w, B)
    owner = (s2 < s1).astype(int)
    scores.append(np.minimum(s1, s2))
    return np.stack(scores), owner


def actor_loss_and_grads(state, obs, pref, W, snapshot_nets, rng=None, noise=None):
    """Actor objective ``mean(alpha * log pi - max over candidates of pref · Q'(s, a; pref'))``.

    Gradients flow through the reparameterised action into the actor only.
    ``W`` must contain ``pref``.
    """
    w = _w(pref)
    if not any(np.max(np.abs(_w(p) - w)) <= 1e-9 for p in W):
        raise InvalidArgumentError("the preference set W must contain the sampling preference")
    obs = np.atleast_2d(obs)
    B = obs.shape[0]
    x_actor = state.actor_input(obs, pref)
    actions, logp, cache = state.actor.sample(x_actor, rng=rng, noise=noise)
    scores, owner = candidate_scores(state, obs, actions, pref, W, snapshot_nets)
    n_src, n_w, _ = scores.shape
    flat = scores.reshape(n_src * n_w, B)
    # argmax returns the first maximum: earliest source, then W order
    win = np.argmax(flat, axis=0)
    cols = np.arange(B)
    best = flat[win, cols]
    loss = float(np.mean(state.alpha * logp - best))

    src, w_idx = np.divmod(win, n_w)
    live = n_src - 1
    net_id = np.where(src == live, live + owner[w_idx, cols], src)
    nets = list(snapshot_nets) + list(state.critics)
    W_arr = np.array([_w(p) for p in W])
    g_action = np.zeros_like(actions)
    a0, a1 = state.obs_dim, state.obs_dim + state.act_dim
    for k in np.unique(net_id):
        rows = np.flatnonzero(net_id == k)
        xk = np.hstack([obs[rows], actions[rows], W_arr[w_idx[rows]]])
        _, ck = nets[k].forward_cached(xk)
        upstream = np.broadcast_to(-w / B, (rows.size, state.d))
        _, gx = nets[k].backward(ck, upstream, param_grads=False)
        g_action[rows] = gx[:, a0:a1]
    g_logp = np.full(B, state.alpha / B)
    grads = state.actor.backward(cache, g_action, g_logp)
    info = {"winner": win, "source": src, "w_index": w_idx, "best": best, "logp": logp}
    return loss, grads, info


def actor_update(state, batch, pref, W, snapshots=None, rng=None, noise=None):
    snaps = state.snapshots if snapshots is None else snapshots
    loss, grads, _ = actor_loss_and_grads(state, batch["obs"], pref, W, snaps.nets, rng=rng, noise=noise)
    if not np.isfinite(loss):
        raise NumericalError(f"non-finite actor loss at gradient step {state.grad_step}")
    state.actor_opt.step(state.actor.parameters(), grads, names=[f"actor.{n}" for n in state.actor.trunk.parameter_names()])
    return loss


def soft_update_targets(state, tau=None):
    tau = state.config.tau if tau is None else tau
    for critic, target in zip(state.critics, state.targets):
        for p, q in zip(critic.parameters(), target.parameters()):
            q *= 1.0 - tau
            q += tau * p


def snapshot_push(state, pref):
    state.snapshots.push(state.critics[0], pref, state.grad_step)


def sample_preference_set(rng, pref, n_lambda):
    """``W``: the sampling preference followed by ``n_lambda - 1`` uniform draws."""
    w = _w(pref)
    return [w] + [uniform_simplex_sample(rng, w.shape[0]).weights for _ in range(n_lambda - 1)]


def gradient_step(state, replay, pref, streams):
    cfg = state.config
    batch = replay.sample(streams["replay"], cfg.batch_size)
    W = sample_preference_set(streams["preference"], pref, cfg.n_lambda)
    critic_loss = critic_update(state, batch, pref, rng=streams["update"])
    state.grad_step += 1
    if cfg.snapshot_capacity and state.grad_step % cfg.snapshot_interval == 0:
        snapshot_push(state, pref)
    actor_loss = actor_update(state, batch, pref, W, rng=streams["update"])
    if state.grad_step % cfg.target_update_interval == 0:
        soft_update_targets(state)
    return critic_loss, actor_loss


def evaluate_policy(env, state, prefs, episodes=1, rng=None, deterministic=True):
    """Mean undiscounted return vector per preference, shape ``(len(prefs), d)``."""
    out = np.zeros((len(prefs), state.d))
    for i, pref in enumerate(prefs):
        w = _w(pref)
        total = np.zeros(state.d)
        for _ in range(episodes):
            s = env.reset(rng)
            for _ in range(env.spec.max_episode_steps):
                a = state.act(env.observe(s), w, rng=rng, deterministic=deterministic)[0]
                s, r, done = env.step(s, a)
                total += r
                if done:
                    break
        out[i] = total / episodes
    return out


def curve_header(d):
    return (
        ["env_step"]
        + [f"pref_{j}" for j in range(d)]
        + [f"return_{j}" for j in range(d)]
        + ["scalarized_return", "critic_loss", "actor_loss"]
    )


def curve_rows(env_step, prefs, returns, critic_loss, actor_loss):
    rows = []
    for pref, ret in zip(prefs, returns):
        w = _w(pref)
        rows.append([int(env_step), *map(float, w), *map(float, ret), float(ret @ w), critic_loss, actor_loss])
    return rows


def write_curve_csv(path, d, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(curve_header(d))
    for row in rows:
        writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    Path(path).write_text(buf.getvalue())


def save_checkpoint(directory, state, streams=None, extra=None):
    """Write ``agent.bin`` and ``manifest.json`` atomically into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = state.meta()
    tmp = directory / "agent.bin.tmp"
    save_arrays(tmp, state.to_arrays(), meta=meta)
    os.replace(tmp, directory / "agent.bin")
    manifest = {
        "format": "qpensieve-agent/1",
        "config_hash": state.config.digest(),
        "grad_step": state.grad_step,
        "env_step": state.env_step,
        "rng_state": {k: _jsonable_state(g) for k, g in (streams or {}).items()},
    }
    if extra:
        manifest.update(extra)
    tmp = directory / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    os.replace(tmp, directory / "manifest.json")
    return directory


def _jsonable_state(gen):
    st = gen.bit_generator.state
    return json.loads(json.dumps(st, default=int))


def load_checkpoint(directory):
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("format") != "qpensieve-agent/1":
        raise InvalidArgumentError(f"unsupported checkpoint format {manifest.get('format')!r}")
    arrays, meta = load_arrays(directory / "agent.bin")
    state = AgentState.from_arrays(arrays, meta)
    if state.config.digest() != manifest["config_hash"]:
        raise InvalidArgumentError("checkpoint manifest does not match the stored configuration")
    return state, manifest


@dataclass
class TrainResult:
    state: AgentState
    curve: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    episodes: int = 0


def train(env, config, seed, eval_prefs=None, checkpoint_dir=None, callback=None):
    """Train a Q-Pensieve agent on ``env`` for ``config.total_steps`` environment steps.

    Parameters
    ----------
    env : ContinuousDST or compatible
        Needs ``reset``, ``step``, ``observe`` and a continuous ``spec``.
    config : AgentConfig
    seed : int
        Master seed; all randomness is derived from it.
    eval_prefs : sequence of preferences, optional
        Evaluated every ``config.eval_interval`` steps.  Defaults to the
        standard metric grid for the environment's objective count.
    checkpoint_dir : path, optional
        Written at every evaluation point when ``config.checkpoint_interval``
        is 0, else every ``checkpoint_interval`` steps, and at the end.

    Returns
    -------
    TrainResult
    """
    if env.spec.action_dim is None:
        raise InvalidArgumentError("the agent needs a continuous-action environment")
    streams = seed_streams(seed)
    d = env.spec.d
    obs_dim = env.observe(env.reset()).shape[0]
    state = AgentState(obs_dim, env.spec.action_dim, d, config, streams["actor_init"], streams["critic_init"])
    replay = ReplayBuffer(config.buffer_size, obs_dim, env.spec.action_dim, d)
    prefs = list(default_metric_grid(d)) if eval_prefs is None else list(eval_prefs)
    result = TrainResult(state)
    ckpt_every = config.checkpoint_interval or config.eval_interval

    pref = uniform_simplex_sample(streams["preference"], d).weights
    s = env.reset(streams["env"])
    ep_len = 0
    c_acc, a_acc, n_acc = 0.0, 0.0, 0
    for t in range(1, config.total_steps + 1):
        obs = env.observe(s)
        if t <= config.warmup_steps:
            action = streams["explore"].uniform(-1.0, 1.0, size=env.spec.action_dim)
        else:
            action = state.act(obs, pref, rng=streams["explore"], deterministic=False)[0]
        s_next, reward, done = env.step(s, action)
        ep_len += 1
        # time-limit truncation still bootstraps, only true termination is stored as done
        replay.add(obs, action, reward, env.observe(s_next), done)
        state.env_step = t
        if done or ep_len >= env.spec.max_episode_steps:
            result.episodes += 1
            pref = uniform_simplex_sample(streams["preference"], d).weights
            s = env.reset(streams["env"])
            ep_len = 0
        else:
            s = s_next
        if t > config.warmup_steps:
            for _ in range(config.gradient_steps):
                cl, al = gradient_step(state, replay, pref, streams)
                c_acc += cl
                a_acc += al
                n_acc += 1
        if t % config.eval_interval == 0:
            closs = c_acc / n_acc if n_acc else float("nan")
            aloss = a_acc / n_acc if n_acc else float("nan")
            result.losses.append((t, closs, aloss))
            returns = evaluate_policy(
                env, state, prefs, episodes=config.eval_episodes, rng=streams["eval"],
                deterministic=config.eval_deterministic,
            )
            result.curve.extend(curve_rows(t, prefs, returns, closs, aloss))
            c_acc, a_acc, n_acc = 0.0, 0.0, 0
            if callback is not None:
                callback(t, state, returns)
        if checkpoint_dir is not None and t % ckpt_every == 0:
            save_checkpoint(checkpoint_dir, state, streams)
    if checkpoint_dir is not None:
        save_checkpoint(checkpoint_dir, state, streams)
    return result


class QPensieveAgent(BaseEstimator):
    """Estimator wrapper around :func:`train` for continuous-action environments.

    Parameters mirror :class:`AgentConfig`, plus ``env`` (an environment id
    or instance used when ``fit`` is called without one) and ``random_state``.

    Attributes
    ----------
    state_ : AgentState
    learning_curve_ : list of rows, see :func:`curve_header`
    """

    def __init__(
        self,
        env="dst-continuous",
        hidden=(256, 256),
        lr=0.0003,
        gamma=0.99,
        buffer_size=1_000_000,
        batch_size=256,
        tau=0.005,
        target_update_interval=1,
        gradient_steps=1,
        alpha=0.2,
        n_lambda=5,
        snapshot_capacity=4,
        snapshot_interval=1000,
        warmup_steps=1000,
        total_steps=100_000,
        eval_interval=5000,
        eval_episodes=5,
        eval_deterministic=True,
        random_state=0,
    ):
        self.env = env
        self.hidden = hidden
        self.lr = lr
        self.gamma = gamma
        self.buffer_size = buffer_size
        self.batch_size = batch_size
        self.tau = tau
        self.target_update_interval = target_update_interval
        self.gradient_steps = gradient_steps
        self.alpha = alpha
        self.n_lambda = n_lambda
        self.snapshot_capacity = snapshot_capacity
        self.snapshot_interval = snapshot_interval
        self.warmup_steps = warmup_steps
        self.total_steps = total_steps
        self.eval_interval = eval_interval
        self.eval_episodes = eval_episodes
        self.eval_deterministic = eval_deterministic
        self.random_state = random_state

    def _config(self):
        params = self.get_params()
        params.pop("env")
        params.pop("random_state")
        return AgentConfig(**params)

    def _make_env(self, env):
        env = self.env if env is None else env
        return make_env(env) if isinstance(env, str) else env

    def fit(self, X=None, y=None, eval_prefs=None):
        """Train; ``X`` may be an environment id or instance overriding ``env``."""
        env = self._make_env(X)
        seed = self.random_state if self.random_state is not None else int(check_rng(None).integers(2**31))
        result = train(env, self._config(), seed, eval_prefs=eval_prefs)
        self.env_ = env
        self.state_ = result.state
        self.learning_curve_ = result.curve
        self.losses_ = result.losses
        self.n_episodes_ = result.episodes
        return self

    def _check_fitted(self):
        if not hasattr(self, "state_"):
            raise InvalidStateError("this QPensieveAgent is not fitted yet; call fit first")

    def predict(self, X, prefs):
        """Deterministic actions for observations ``X`` (n, obs_dim) under ``prefs`` (n, d) or (d,)."""
        self._check_fitted()
        X = np.atleast_2d(np.asarray(X, dtype=float))
        P = np.broadcast_to(np.asarray(prefs, dtype=float), (X.shape[0], self.state_.d))
        return self.state_.actor.deterministic(np.hstack([X, P]))

    def evaluate(self, prefs=None, episodes=1, seed=0):
        self._check_fitted()
        prefs = list(default_metric_grid(self.state_.d)) if prefs is None else list(prefs)
        return evaluate_policy(self.env_, self.state_, prefs, episodes=episodes, rng=np.random.default_rng(seed),
                               deterministic=self.eval_deterministic)

    def save(self, directory):
        self._check_fitted()
        return save_checkpoint(directory, self.state_)

    @classmethod
    def load(cls, directory, env="dst-continuous"):
        state, _ = load_checkpoint(directory)
        params = state.config.to_dict()
        params.pop("checkpoint_interval")
        params["hidden"] = tuple(params["hidden"])
        agent = cls(env=env, **params)
        agent.env_ = agent._make_env(None)
        agent.state_ = state
        return agent
