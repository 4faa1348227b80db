"""Episode orchestration: plan once, hand sub-goals to the worker, score.

A plan is generated from the initial observation and never revised;
execution order is the reversal of generation order (for the backward
planner).  The active sub-goal's position is re-read every step and the
pointer advances when the player contacts the sub-goal object.  Plans
that name an unreachable object are counted as plan failures and the
episode runs on (the worker keeps heading for the last known position)
until loss or timeout.

Also hosts the scripted agents: the uniform-random worker and the
pathfinding oracle used for the no-training upper bound.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .corpus import PAD_ID
from .manager import ManagerNet, Plan, generate_plan
from .rng import Rng, derive_seed
from .rtfm_env import ACTIONS, DELTAS, GridWorld, Observation
from .worker import WorkerNet, featurize, sample_actions, worker_forward

__all__ = [
    "MODES", "WORKER_KINDS", "EpisodeTrace", "bfs_action", "bfs_oracle_worker",
    "run_episode", "evaluate", "binomial_stderr", "plan_for_mode",
]

MODES = ("frl_backward", "frl_forward", "random_manager", "groundtruth_subgoals")
WORKER_KINDS = ("trained", "random", "bfs_oracle")


@dataclass
class EpisodeTrace:
    seed: int
    mode: str
    worker: str
    plan_generated: list[int]
    plan_execution_eids: list[int]
    steps: list[dict] = field(default_factory=list)
    outcome: str = "running"
    frames: int = 0
    loss_cause: str | None = None
    corner_trap: bool = False
    plan_failure: bool = False

    def to_json_lines(self) -> list[str]:
        head = {"type": "header", "seed": self.seed, "mode": self.mode,
                "worker": self.worker, "plan_generated": self.plan_generated,
                "plan_execution_eids": self.plan_execution_eids}
        lines = [json.dumps(head, sort_keys=True)]
        lines += [json.dumps(s, sort_keys=True) for s in self.steps]
        tail = {"type": "outcome", "outcome": self.outcome, "frames": self.frames,
                "loss_cause": self.loss_cause, "corner_trap": self.corner_trap,
                "plan_failure": self.plan_failure}
        lines.append(json.dumps(tail, sort_keys=True))
        return lines


def _obs_digest(obs: Observation) -> str:
    key = json.dumps([obs.grid, list(obs.player_pos), obs.inventory_ids],
                     sort_keys=True)
    return hashlib.sha1(key.encode("utf-8")).hexdigest()[:12]


# ---------------------------------------------------------------------------
# scripted workers


def _neighbors(pos: tuple[int, int], height: int, width: int):
    for action in ("up", "down", "left", "right"):
        dr, dc = DELTAS[action]
        r, c = pos[0] + dr, pos[1] + dc
        if 0 <= r < height and 0 <= c < width:
            yield action, (r, c)


def bfs_action(player: tuple[int, int], target: tuple[int, int],
               blocked: set[tuple[int, int]], height: int, width: int) -> str | None:
    """First action of a shortest free path to ``target``; None if cut off.

    Ties break by expanding in the fixed action order
    up < down < left < right, so equal-length paths resolve
    deterministically.
    """
    if player == target:
        return "stay"
    prev: dict[tuple[int, int], tuple] = {player: None}
    frontier = deque([player])
    while frontier:
        cur = frontier.popleft()
        for action, nxt in _neighbors(cur, height, width):
            if nxt in prev:
                continue
            if nxt != target and nxt in blocked:
                continue
            prev[nxt] = (cur, action)
            if nxt == target:
                node, act = prev[nxt]
                while node != player:
                    node, act = prev[node]
                return act
            frontier.append(nxt)
    return None


def bfs_oracle_worker(observation: Observation, subgoal_eid: int,
                      target_pos: tuple[int, int], height: int, width: int) -> str:
    """Scripted navigator: shortest path, wide berth around monsters.

    Non-target entity cells are blocked, as is the 4-neighborhood of
    every non-target monster (conservative hazard zone).  When the
    target itself sits next to a monster the oracle waits in place until
    the hazard moves off; with no free path it also stays.
    """
    blocked: set[tuple[int, int]] = set()
    hazards = []
    for obj in observation.objects:
        if obj.eid == subgoal_eid:
            continue
        blocked.add(obj.pos)
        if obj.kind == "monster":
            hazards.append(obj.pos)
            for _, n in _neighbors(obj.pos, height, width):
                blocked.add(n)
    for hz in hazards:
        if abs(hz[0] - target_pos[0]) + abs(hz[1] - target_pos[1]) <= 1:
            return "stay"
    action = bfs_action(observation.player_pos, target_pos, blocked, height, width)
    return action if action is not None else "stay"


# ---------------------------------------------------------------------------
# planning per mode


def plan_for_mode(mode: str, env: GridWorld, obs: Observation,
                  manager_net: ManagerNet | None, rng: Rng) -> Plan:
    """Build the episode plan (generation order + execution order)."""
    eids = [o.eid for o in obs.objects]
    if mode == "groundtruth_subgoals":
        gen = [eids.index(env.target_monster.eid), eids.index(env.target_item.eid)]
        return Plan(generated=gen, execution=gen[::-1], object_eids=eids)
    if mode == "random_manager":
        gen = rng.sample_indices(len(eids), min(2, len(eids)))
        return Plan(generated=gen, execution=gen[::-1], object_eids=eids)
    if mode in ("frl_backward", "frl_forward"):
        if manager_net is None:
            raise ValueError(f"mode {mode} requires a manager")
        goal_tokens = list(env.goal.tokens)
        sentences = [list(s) for s in env.manual.sentences]
        names = [list(o.name_ids) for o in obs.objects]
        return generate_plan(manager_net, goal_tokens, sentences, names, eids)
    raise ValueError(f"unknown mode {mode!r}; use one of {MODES}")


# ---------------------------------------------------------------------------
# episode loop


def run_episode(env: GridWorld, mode: str, worker: str, seed: int,
                manager_net: ManagerNet | None = None,
                worker_net: WorkerNet | None = None,
                record_steps: bool = False,
                injected_plan: Plan | None = None) -> EpisodeTrace:
    """Play one full game under the chosen manager mode and worker.

    The plan is generated once from the reset observation.  The active
    sub-goal advances on contact; its position is re-read every step
    (falling back to the last known position if the object is gone).
    """
    if worker not in WORKER_KINDS:
        raise ValueError(f"unknown worker {worker!r}; use one of {WORKER_KINDS}")
    obs, manual, goal = env.reset(seed)
    rng = Rng(derive_seed(seed, f"runtime-{mode}-{worker}"))
    plan = injected_plan if injected_plan is not None \
        else plan_for_mode(mode, env, obs, manager_net, rng)
    exec_eids = plan.execution_eids()

    trace = EpisodeTrace(seed=seed, mode=mode, worker=worker,
                         plan_generated=list(plan.generated),
                         plan_execution_eids=list(exec_eids))
    height, width = env.config.height, env.config.width
    last_pos = {o.eid: o.pos for o in obs.objects}
    goal_idx = 0

    while True:
        obs = env.observe()
        for o in obs.objects:
            last_pos[o.eid] = o.pos
        if goal_idx < len(exec_eids):
            subgoal_eid = exec_eids[goal_idx]
        else:
            subgoal_eid = exec_eids[-1]
        alive_eids = {o.eid for o in obs.objects}
        if subgoal_eid not in alive_eids and goal_idx < len(exec_eids):
            trace.plan_failure = True
        target_pos = last_pos.get(subgoal_eid, obs.player_pos)

        if worker == "random":
            action = ACTIONS[rng.integers(0, len(ACTIONS))]
        elif worker == "bfs_oracle":
            action = bfs_oracle_worker(obs, subgoal_eid, target_pos, height, width)
        else:
            if worker_net is None:
                raise ValueError("trained worker requires worker_net")
            feat = featurize(obs, target_pos, height, width, worker_net.config.l_obs)
            logits, _ = worker_forward(worker_net, feat.grid_ids[None],
                                       feat.x_pos[None], feat.x_target[None])
            action = ACTIONS[sample_actions(logits.data, rng)[0]]

        player_events = env.player_phase(action)
        monster_events = env.monster_phase()
        result = env.finish_round(player_events + monster_events)
        for ev in player_events + monster_events:
            if ev.kind in ("picked_item", "combat_won") and goal_idx < len(exec_eids) \
                    and ev.eid == exec_eids[goal_idx]:
                goal_idx += 1
        if record_steps:
            trace.steps.append({
                "type": "step", "t": trace.frames, "obs_digest": _obs_digest(obs),
                "grid": obs.grid, "player": list(obs.player_pos),
                "inventory": obs.inventory_ids, "subgoal_eid": subgoal_eid,
                "subgoal_index": goal_idx, "action": action,
                "reward": result.reward,
                "events": [ev.to_json() for ev in result.events]})
        trace.frames += 1
        if result.done:
            trace.outcome = env.status
            if env.status == "lost":
                if any(ev.kind == "timeout" for ev in result.events):
                    trace.loss_cause = "timeout"
                elif any(ev.kind == "combat_lost" for ev in player_events):
                    trace.loss_cause = "wrong_object"
                else:
                    trace.loss_cause = "killed"
                if trace.loss_cause == "killed":
                    pr, pc = env.player.pos
                    on_border = pr in (0, height - 1) or pc in (0, width - 1)
                    close = sum(1 for m in env.alive_monsters()
                                if abs(m.row - pr) + abs(m.col - pc) <= 2)
                    monsters_dead = len(env.alive_monsters())
                    trace.corner_trap = bool(on_border and (close + (
                        2 - min(2, monsters_dead))) >= 2 and close >= 1)
            break
    return trace


def binomial_stderr(p: float, n: int) -> float:
    return float(np.sqrt(max(p * (1.0 - p), 0.0) / max(n, 1)))


def evaluate(env: GridWorld, mode: str, worker: str, n_episodes: int, seed: int,
             manager_net: ManagerNet | None = None,
             worker_net: WorkerNet | None = None,
             trace_sink=None) -> dict:
    """Win rate with binomial stderr and a loss-cause histogram."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    wins = 0
    causes = {"wrong_object": 0, "killed": 0, "timeout": 0}
    corner = 0
    plan_failures = 0
    frames = 0
    for ep in range(n_episodes):
        ep_seed = derive_seed(seed, f"eval-ep{ep}")
        trace = run_episode(env, mode, worker, ep_seed, manager_net, worker_net,
                            record_steps=trace_sink is not None)
        frames += trace.frames
        plan_failures += trace.plan_failure
        if trace.outcome == "won":
            wins += 1
        else:
            causes[trace.loss_cause] = causes.get(trace.loss_cause, 0) + 1
            corner += trace.corner_trap
        if trace_sink is not None:
            for line in trace.to_json_lines():
                trace_sink.write(line + "\n")
    p = wins / n_episodes
    return {"mode": mode, "worker": worker, "episodes": n_episodes,
            "win_rate": p, "stderr": binomial_stderr(p, n_episodes),
            "loss_causes": causes, "corner_trap_losses": corner,
            "plan_failures": plan_failures, "frames": frames}
