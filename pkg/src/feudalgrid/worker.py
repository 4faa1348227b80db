"""Low-level policy: reach the indicated object, stay alive.

The worker sees the grid as bag-of-words cell embeddings plus two
coordinate planes (per-cell offsets to the player, broadcast target
coordinates), runs a five-layer shape-preserving conv trunk with a
residual hop from layer 3 to layer 5 (positions re-concatenated at
every layer), global-max-pools, and emits action logits and a state
value.  Training is synchronous advantage actor-critic over parallel
episode streams with n-step bootstrapped returns and RMSProp.

Training tasks wrap the full game with goal-conditioned scoring:
reach the sampled target object(s) in order (+1), any wrong touch or
death is -1; the ``*_alive`` variants additionally require surviving
the round in which the final target is reached, while
``single_no_alive`` ends the episode the moment the target is touched,
before the monsters move.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Conv2d, EmbeddingTable, Mlp2
from .optim import ParameterStore, clip_grad_norm, rmsprop_step
from .rng import Rng, derive_seed
from .rtfm_env import ACTIONS, GridWorld, Observation

__all__ = [
    "WorkerConfig", "A2CConfig", "WorkerNet", "FeaturizedObs", "featurize",
    "worker_forward", "RtfmGoalTask", "VARIANTS", "rollout", "compute_returns",
    "actor_critic_update", "train_worker", "evaluate_worker", "sample_actions",
]

VARIANTS = ("single_no_alive", "single_alive", "pair_alive")


@dataclass
class WorkerConfig:
    d_e: int = 32
    channels: int = 64
    kernel: int = 3
    l_obs: int = 4
    n_actions: int = len(ACTIONS)


@dataclass
class A2CConfig:
    gamma: float = 0.99
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    grad_clip: float = 40.0
    lr: float = 4e-4
    rmsprop_alpha: float = 0.99
    rmsprop_eps: float = 0.01
    unroll: int = 20
    n_actors: int = 20


class WorkerNet:
    """Embedding table, conv trunk, policy and baseline heads."""

    def __init__(self, store: ParameterStore, vocab_size: int,
                 config: WorkerConfig, rng: Rng, prefix: str = "worker"):
        self.config = config
        self.store = store
        c = config.channels
        self.embed = EmbeddingTable(store, f"{prefix}.embed", vocab_size, config.d_e, rng)
        self.convs = []
        for i in range(5):
            c_in = (config.d_e + 2 if i == 0 else c) + 2  # +2 pos planes each layer
            self.convs.append(Conv2d(store, f"{prefix}.conv{i + 1}", c_in, c,
                                     config.kernel, rng))
        self.policy = Mlp2(store, f"{prefix}.policy", c, c, config.n_actions, rng)
        self.baseline = Mlp2(store, f"{prefix}.baseline", c, c, 1, rng)


@dataclass
class FeaturizedObs:
    grid_ids: np.ndarray   # (H, W, l_obs) int64
    x_pos: np.ndarray      # (2, H, W) offsets to the player
    x_target: np.ndarray   # (2, H, W) broadcast target coordinates


def featurize(obs: Observation, target_pos: tuple[int, int],
              height: int, width: int, l_obs: int = 4) -> FeaturizedObs:
    """Token grid plus position planes for one observation.

    Cell offsets are (index - player_index) normalized by the grid
    side; the target plane holds 2*i/S - 1 broadcast everywhere.
    """
    grid_ids = np.zeros((height, width, l_obs), dtype=np.int64)
    for r in range(height):
        for c in range(width):
            cell = obs.grid[r][c][:l_obs]
            grid_ids[r, c, :len(cell)] = cell
    pr, pc = obs.player_pos
    rows = (np.arange(height, dtype=np.float64) - pr) / height
    cols = (np.arange(width, dtype=np.float64) - pc) / width
    x_pos = np.stack([np.repeat(rows[:, None], width, axis=1),
                      np.repeat(cols[None, :], height, axis=0)])
    tr, tc = target_pos
    x_target = np.empty((2, height, width))
    x_target[0] = 2.0 * tr / height - 1.0
    x_target[1] = 2.0 * tc / width - 1.0
    return FeaturizedObs(grid_ids=grid_ids, x_pos=x_pos, x_target=x_target)


def worker_forward(net: WorkerNet, grid_ids: np.ndarray, x_pos: np.ndarray,
                   x_target: np.ndarray) -> tuple[Tensor, Tensor]:
    """Batched policy/baseline forward; returns (logits (B, A), value (B,))."""
    bag = net.embed.bag(grid_ids)                      # (B, H, W, d_e)
    bag = ad.transpose(bag, (0, 3, 1, 2))
    v = ad.concat([bag, Tensor(x_target)], axis=1)
    pos = Tensor(x_pos)
    v3 = None
    for i, conv in enumerate(net.convs):
        r = ad.concat([v, pos], axis=1)
        z = conv(r)
        if i == 4:
            z = ad.add(z, v3)
        v = ad.relu(z)
        if i == 2:
            v3 = v
    pooled = ad.reduce_max(v, axes=(2, 3))
    logits = net.policy(pooled)
    value = ad.reshape(net.baseline(pooled), (pooled.shape[0],))
    return logits, value


def sample_actions(logits: np.ndarray, rng: Rng) -> np.ndarray:
    """One categorical draw per row of logits."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    p = np.exp(shifted)
    p /= p.sum(axis=-1, keepdims=True)
    return np.array([rng.categorical(row) for row in p], dtype=np.int64)


# ---------------------------------------------------------------------------
# goal-conditioned training tasks


class RtfmGoalTask:
    """Goal-conditioned episode wrapper over the full grid game.

    ``single_*`` variants sample one random target object per episode;
    ``pair_alive`` uses the episode's true ordered pair (target item
    then target monster).  Monster targets are weakened so reaching
    them cannot kill the agent.
    """

    def __init__(self, env: GridWorld, variant: str):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; use one of {VARIANTS}")
        self.env = env
        self.variant = variant

    def reset(self, seed: int) -> Observation:
        obs, _, _ = self.env.reset(seed)
        env = self.env
        if self.variant == "pair_alive":
            self.goals = [env.target_item.eid, env.target_monster.eid]
        else:
            candidates = [o.eid for o in obs.objects]
            self.goals = [candidates[env.rng.integers(0, len(candidates))]]
        for eid in self.goals:
            if env.entity[eid].kind == "monster":
                env.entity[eid].weakened = True
        self.stage = 0
        self.frames = 0
        return obs

    @property
    def done(self) -> bool:
        return self.env.status != "running" or self.stage >= len(self.goals)

    @property
    def current_goal_eid(self) -> int:
        return self.goals[min(self.stage, len(self.goals) - 1)]

    def target_pos(self) -> tuple[int, int]:
        return self.env.entity[self.current_goal_eid].pos

    def observe(self) -> Observation:
        return self.env.observe()

    def _judge_contacts(self, events, player_initiated: bool) -> float | None:
        """Returns a terminal reward, or None to continue."""
        for ev in events:
            if ev.kind == "combat_lost":
                return -1.0
            if ev.kind not in ("picked_item", "combat_won"):
                continue
            if self.stage < len(self.goals) and ev.eid == self.goals[self.stage]:
                self.stage += 1
            elif player_initiated:
                return -1.0  # touched a wrong object
        return None

    def step(self, action: str) -> tuple[float, bool]:
        """One round of the wrapped game under task scoring."""
        env = self.env
        self.frames += 1
        events = env.player_phase(action)
        verdict = self._judge_contacts(events, player_initiated=True)
        if verdict is not None:
            return verdict, True
        if self.variant == "single_no_alive" and self.stage == len(self.goals):
            return 1.0, True  # episode ends before the monsters move
        events = env.monster_phase()
        verdict = self._judge_contacts(events, player_initiated=False)
        if verdict is not None:
            return verdict, True
        if self.stage == len(self.goals):
            return 1.0, True  # reached everything and survived the round
        result = env.finish_round([])
        if result.done:
            return -1.0, True  # timeout (or residual game-over state)
        return 0.0, False


# ---------------------------------------------------------------------------
# rollout and updates


@dataclass
class RolloutBatch:
    grid_ids: np.ndarray   # (T, B, H, W, l)
    x_pos: np.ndarray      # (T, B, 2, H, W)
    x_target: np.ndarray   # (T, B, 2, H, W)
    actions: np.ndarray    # (T, B)
    rewards: np.ndarray    # (T, B)
    dones: np.ndarray      # (T, B)
    values: np.ndarray     # (T, B) rollout-time values
    bootstrap: np.ndarray  # (B,) value of the state after the last step
    episode_results: list = field(default_factory=list)  # terminal rewards

    @property
    def frames(self) -> int:
        return self.actions.size


class ActorPool:
    """Fixed set of sequential episode streams with deterministic seeds."""

    def __init__(self, task_factory, n_actors: int, run_seed: int, l_obs: int = 4):
        self.tasks = [task_factory() for _ in range(n_actors)]
        self.run_seed = run_seed
        self.l_obs = l_obs
        self.episode_counts = [0] * n_actors
        self.policy_rng = Rng(derive_seed(run_seed, "policy"))
        self._obs = [self._reset_actor(i) for i in range(n_actors)]

    def _reset_actor(self, i: int):
        seed = derive_seed(self.run_seed, f"actor{i}-ep{self.episode_counts[i]}")
        self.episode_counts[i] += 1
        self.tasks[i].reset(seed)
        return self._feat(i)

    def _feat(self, i: int) -> FeaturizedObs:
        task = self.tasks[i]
        env = task.env
        return featurize(task.observe(), task.target_pos(),
                         env.config.height, env.config.width, self.l_obs)

    def collect(self, net: WorkerNet, unroll: int) -> RolloutBatch:
        """Step every stream ``unroll`` times under the current policy."""
        n = len(self.tasks)
        steps = {k: [] for k in ("grid", "pos", "tgt", "act", "rew", "done", "val")}
        results = []
        for _ in range(unroll):
            grid = np.stack([f.grid_ids for f in self._obs])
            pos = np.stack([f.x_pos for f in self._obs])
            tgt = np.stack([f.x_target for f in self._obs])
            logits, values = worker_forward(net, grid, pos, tgt)
            actions = sample_actions(logits.data, self.policy_rng)
            rewards = np.zeros(n)
            dones = np.zeros(n, dtype=bool)
            for i, task in enumerate(self.tasks):
                r, done = task.step(ACTIONS[actions[i]])
                rewards[i] = r
                dones[i] = done
                if done:
                    results.append(r)
                    self._obs[i] = self._reset_actor(i)
                else:
                    self._obs[i] = self._feat(i)
            steps["grid"].append(grid)
            steps["pos"].append(pos)
            steps["tgt"].append(tgt)
            steps["act"].append(actions)
            steps["rew"].append(rewards)
            steps["done"].append(dones)
            steps["val"].append(values.data.copy())
        grid = np.stack([f.grid_ids for f in self._obs])
        pos = np.stack([f.x_pos for f in self._obs])
        tgt = np.stack([f.x_target for f in self._obs])
        _, boot = worker_forward(net, grid, pos, tgt)
        return RolloutBatch(
            grid_ids=np.stack(steps["grid"]), x_pos=np.stack(steps["pos"]),
            x_target=np.stack(steps["tgt"]), actions=np.stack(steps["act"]),
            rewards=np.stack(steps["rew"]), dones=np.stack(steps["done"]),
            values=np.stack(steps["val"]), bootstrap=boot.data.copy(),
            episode_results=results)


def rollout(task_factory, net: WorkerNet, n_actors: int, unroll: int,
            run_seed: int) -> RolloutBatch:
    """One-off unroll collection (fresh actors); see ActorPool for loops."""
    pool = ActorPool(task_factory, n_actors, run_seed, net.config.l_obs)
    return pool.collect(net, unroll)


def compute_returns(rewards: np.ndarray, dones: np.ndarray,
                    bootstrap: np.ndarray, gamma: float) -> np.ndarray:
    """n-step bootstrapped returns along the unroll axis."""
    T, B = rewards.shape
    out = np.zeros((T, B))
    running = bootstrap.copy()
    for t in range(T - 1, -1, -1):
        running = rewards[t] + gamma * np.where(dones[t], 0.0, running)
        out[t] = running
    return out


def actor_critic_update(net: WorkerNet, batch: RolloutBatch, cfg: A2CConfig) -> dict:
    """Policy-gradient + value regression + entropy bonus on one batch."""
    if batch.frames == 0:
        raise ValueError("actor_critic_update: empty batch")
    returns = compute_returns(batch.rewards, batch.dones, batch.bootstrap, cfg.gamma)
    adv = (returns - batch.values).reshape(-1)
    T, B = batch.actions.shape
    flat = lambda a: a.reshape((T * B,) + a.shape[2:])

    net.store.clear_grads()
    with ad.Tape():
        logits, value = worker_forward(net, flat(batch.grid_ids),
                                       flat(batch.x_pos), flat(batch.x_target))
        ce = ad.softmax_cross_entropy(logits, batch.actions.reshape(-1))
        pg_loss = ad.mean(ad.mul(ce, Tensor(adv)))
        diff = ad.sub(Tensor(returns.reshape(-1)), value)
        value_loss = ad.mean(ad.mul(diff, diff))
        p = ad.softmax(logits, axis=-1)
        lp = ad.log_softmax(logits, axis=-1)
        entropy = ad.scale(ad.mean(ad.reduce_sum(ad.mul(p, lp), axes=(1,))), -1.0)
        total = ad.add(ad.add(pg_loss, ad.scale(value_loss, cfg.value_coef)),
                       ad.scale(entropy, -cfg.entropy_coef))
        ad.backward(total)
    grad_norm = clip_grad_norm(net.store, cfg.grad_clip)
    rmsprop_step(net.store, lr=cfg.lr, alpha=cfg.rmsprop_alpha, eps=cfg.rmsprop_eps)
    return {"policy_loss": pg_loss.item(), "value_loss": value_loss.item(),
            "entropy": entropy.item(), "grad_norm": grad_norm,
            "frames": batch.frames}


def train_worker(task_factory, net: WorkerNet, cfg: A2CConfig, run_seed: int,
                 max_frames: int, log=None, stop_at_win_rate: float | None = None,
                 window: int = 400) -> dict:
    """Synchronous advantage actor-critic loop.

    Logs one record per update with frames, the trailing-window win
    rate, and loss terms; stops early once the window win rate reaches
    ``stop_at_win_rate`` (if given) or at ``max_frames``.
    """
    pool = ActorPool(task_factory, cfg.n_actors, run_seed, net.config.l_obs)
    frames = 0
    recent: list[float] = []
    stats: dict = {}
    while frames < max_frames:
        batch = pool.collect(net, cfg.unroll)
        stats = actor_critic_update(net, batch, cfg)
        frames += batch.frames
        recent.extend(1.0 if r > 0 else 0.0 for r in batch.episode_results)
        if len(recent) > window:
            recent = recent[-window:]
        win = float(np.mean(recent)) if recent else 0.0
        stats.update({"frames": frames, "win_rate_window": win,
                      "episodes_window": len(recent)})
        if log is not None:
            log(dict(stats))
        if (stop_at_win_rate is not None and len(recent) >= window
                and win >= stop_at_win_rate):
            break
    return stats


def evaluate_worker(task_factory, net: WorkerNet, n_episodes: int,
                    run_seed: int, max_frames_per_episode: int | None = None) -> dict:
    """Win rate of the current policy over fresh episodes (sampled actions)."""
    task = task_factory()
    rng = Rng(derive_seed(run_seed, "eval-policy"))
    wins = 0
    for ep in range(n_episodes):
        task.reset(derive_seed(run_seed, f"eval-ep{ep}"))
        frames = 0
        while True:
            env = task.env
            feat = featurize(task.observe(), task.target_pos(),
                             env.config.height, env.config.width, net.config.l_obs)
            logits, _ = worker_forward(net, feat.grid_ids[None], feat.x_pos[None],
                                       feat.x_target[None])
            action = sample_actions(logits.data, rng)[0]
            reward, done = task.step(ACTIONS[action])
            frames += 1
            if done:
                wins += reward > 0
                break
            if max_frames_per_episode and frames >= max_frames_per_episode:
                break
    return {"win_rate": wins / n_episodes, "episodes": n_episodes}
