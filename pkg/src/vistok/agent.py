"""Observe/act loop that records agent episodes as ChatML transcripts.

The policy is any callable taking the history so far and returning a
:class:`Decision`; environments implement ``reset()`` and ``step()``. Both are
deterministic in the scripted implementations shipped here, so an episode
transcript is reproducible byte for byte.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from .chatml import (
    AgentStep,
    ImageRef,
    Message,
    Segment,
    Text,
    _args_from_json,
    segment_from_json,
    serialize,
)
from .errors import StepLimitExceeded, UnknownAction

DEFAULT_MAX_STEPS = 32


@dataclass(frozen=True)
class Observation:
    segments: Optional[Tuple[Segment, ...]]
    done: bool = False
    info: Mapping = field(default_factory=dict)


@dataclass(frozen=True)
class Decision:
    """``function=None`` ends the episode; ``thought`` is the reasoning shown before acting."""

    thought: str = ""
    function: Optional[str] = None
    args: Dict = field(default_factory=dict)
    reply: Optional[str] = None


@dataclass
class Episode:
    task: str
    system_prompt: str
    initial: Observation
    decisions: List[Decision] = field(default_factory=list)
    observations: List[Observation] = field(default_factory=list)

    @property
    def actions(self) -> List[Tuple[str, Dict]]:
        return [(d.function, d.args) for d in self.decisions if d.function is not None]

    @property
    def final_observation(self) -> Observation:
        return self.observations[-1] if self.observations else self.initial

    def conversation(self) -> List[Message]:
        user = [Text(self.task + " ")] if self.task else []
        user += list(self.initial.segments or ())
        content: List[Segment] = []
        steps = [(d, o) for d, o in zip(self.decisions, self.observations)]
        tail = self.decisions[len(steps)] if len(self.decisions) > len(steps) else None
        if not steps:
            parts = [tail.thought, tail.reply] if tail is not None else []
            text = "\n".join(p for p in parts if p)
            content = [Text(text)] if text else []
            return self._messages(user, content)
        if self.decisions[0].thought:
            content.append(Text(self.decisions[0].thought + "\n"))
        for n, (dec, obs) in enumerate(steps):
            following = steps[n + 1][0] if n + 1 < len(steps) else tail
            result = obs.segments
            ret = following.thought if following is not None else None
            if ret is not None and result is None:
                result = ()
            if n:
                content.append(Text("\n"))
            content.append(AgentStep(dec.function, dict(dec.args), result, ret))
        if tail is not None and tail.reply:
            content.append(Text("\n" + tail.reply))
        return self._messages(user, content)

    def _messages(self, user, content) -> List[Message]:
        return [
            Message("system", (Text(self.system_prompt),)),
            Message("user", tuple(user)),
            Message("assistant", tuple(content)),
        ]

    def transcript(self) -> str:
        return serialize(self.conversation())[0]


def render_system_prompt(actions: Mapping[str, str]) -> str:
    lines = ["You are a helpful assistant.", "# Actions", "## You have the following actions."]
    for name, description in actions.items():
        lines += [f"### {name}", description]
    lines += [
        "## Continuously take action until the task is completed.",
        "*FUNCTION*: The action to take, should be one of {" + ",".join(actions) + "}.",
        "*ARGS*: The input of the action.",
        "*RESULT*: Action results.",
        "*RETURN*: Reply based on action results.",
    ]
    return "\n".join(lines)


def simulate_episode(
    task: str,
    actions: Mapping[str, str],
    env,
    policy: Callable[[Sequence[Tuple[Decision, Observation]], Observation], Decision],
    max_steps: int = DEFAULT_MAX_STEPS,
    system_prompt: Optional[str] = None,
) -> Episode:
    """Run policy -> action -> environment until the environment is done or the policy stops.

    ``policy(history, latest_observation)`` gets the list of ``(decision,
    observation)`` pairs so far. Raises :class:`UnknownAction` for actions
    outside ``actions`` and :class:`StepLimitExceeded` after ``max_steps``
    actions without the episode ending.
    """
    initial = env.reset()
    episode = Episode(task, system_prompt or render_system_prompt(actions), initial)
    obs = initial
    while not obs.done:
        history = list(zip(episode.decisions, episode.observations))
        decision = policy(history, obs)
        episode.decisions.append(decision)
        if decision.function is None:
            break
        if decision.function not in actions:
            raise UnknownAction(decision.function, len(episode.observations) + 1)
        if len(episode.observations) >= max_steps:
            raise StepLimitExceeded(f"episode did not finish within {max_steps} steps")
        obs = env.step(decision.function, decision.args)
        episode.observations.append(obs)
    return episode


def run_agent_episode(task, actions, env, policy, max_steps: int = DEFAULT_MAX_STEPS) -> str:
    return simulate_episode(task, actions, env, policy, max_steps).transcript()


class ScriptedPolicy:
    """Replays a fixed list of decisions, then stops."""

    def __init__(self, decisions: Sequence[Decision]):
        self.decisions = list(decisions)

    def __call__(self, history, observation) -> Decision:
        n = len(history)
        return self.decisions[n] if n < len(self.decisions) else Decision()


class ScriptedEnvironment:
    """Finite-state environment: ``states[state]`` lists transitions keyed by action.

    A transition matches on ``function`` and, when given, on ``args``. Unknown
    moves leave the state unchanged and report ``No effect.``.
    """

    def __init__(self, start: str, states: Mapping[str, Sequence[Mapping]], initial: Observation):
        self.start = start
        self.states = states
        self.initial = initial
        self.state = start

    def reset(self) -> Observation:
        self.state = self.start
        return self.initial

    def step(self, function: str, args: Mapping) -> Observation:
        for tr in self.states.get(self.state, ()):
            if tr["function"] == function and ("args" not in tr or _args_from_json(tr["args"]) == dict(args)):
                self.state = tr.get("next", self.state)
                obs = tr.get("observation")
                segs = None if obs is None else tuple(segment_from_json(s) for s in obs)
                return Observation(segs, bool(tr.get("done", False)), tr.get("info", {}))
        return Observation((Text("No effect."),), False)


CARD_POINTS = {"A": 1, "J": 10, "Q": 10, "K": 10}


def hand_points(cards: Sequence[str]) -> int:
    total = sum(CARD_POINTS.get(c, None) or int(c) for c in cards)
    if "A" in cards and total + 10 <= 21:
        total += 10
    return total


class BlackjackEnvironment:
    """One round of blackjack against a dealer who draws below 17.

    The dealer's second card stays hidden until the player stands. Non-final
    observations are screenshot references; the final one is a text report.
    """

    def __init__(self, player: Sequence[str], dealer: Sequence[str], deck: Sequence[str]):
        self._setup = (list(player), list(dealer), list(deck))
        self.reset()

    def _screenshot(self) -> Observation:
        self.shots += 1
        info = {
            "player_points": hand_points(self.player),
            "dealer_points": hand_points(self.dealer[:1]),
        }
        return Observation((ImageRef(f"Screenshot_{self.shots}.jpg"),), False, info)

    def reset(self) -> Observation:
        player, dealer, deck = self._setup
        self.player, self.dealer, self.deck = list(player), list(dealer), list(deck)
        self.shots = 0
        return self._screenshot()

    def step(self, function: str, args: Mapping) -> Observation:
        if function == "Hit":
            self.player.append(self.deck.pop(0))
            if hand_points(self.player) > 21:
                return self._report()
            return self._screenshot()
        if function == "Stand":
            while hand_points(self.dealer) < 17:
                self.dealer.append(self.deck.pop(0))
            return self._report()
        return Observation((Text("No effect."),), False)

    def _report(self) -> Observation:
        p, d = hand_points(self.player), hand_points(self.dealer)
        if p > 21:
            outcome = "Dealer win!"
        elif d > 21 or p > d:
            outcome = "Player win!"
        elif p == d:
            outcome = "Push!"
        else:
            outcome = "Dealer win!"
        d_cmp = " > 21" if d > 21 else ""
        p_cmp = " > 21" if p > 21 else ""
        text = (
            f"Dealer Card: {', '.join(self.dealer)}. The total point of dealer is {d}{d_cmp}.\n"
            f"Player Card: {', '.join(self.player)}. The total point of player is {p}{p_cmp}.\n"
            f"{outcome}"
        )
        return Observation((Text(text),), True, {"outcome": outcome, "player_points": p, "dealer_points": d})


def threshold_policy(stand_at: int = 17):
    """Hit while below ``stand_at`` points, then stand."""

    def policy(history, obs: Observation) -> Decision:
        p, d = obs.info["player_points"], obs.info["dealer_points"]
        move = "Hit" if p < stand_at else "Stand"
        thought = f"I have {p} points, and the dealer has {d} points. I should {move.lower()}."
        return Decision(thought, move, {})

    return policy


def _decision_from_json(obj: Mapping) -> Decision:
    return Decision(
        obj.get("thought", ""),
        obj.get("function"),
        _args_from_json(obj.get("args", {})),
        obj.get("reply"),
    )


def load_scenario(path) -> dict:
    """Build ``{task, actions, env, policy, max_steps}`` from a scenario JSON file."""
    spec = json.loads(Path(path).read_text(encoding="utf-8"))
    env_spec = spec["environment"]
    if env_spec["type"] == "blackjack":
        env = BlackjackEnvironment(env_spec["player"], env_spec["dealer"], env_spec["deck"])
    elif env_spec["type"] == "scripted":
        initial = Observation(
            tuple(segment_from_json(s) for s in env_spec.get("initial", [])),
            bool(env_spec.get("initially_done", False)),
        )
        env = ScriptedEnvironment(env_spec["start"], env_spec["states"], initial)
    else:
        raise ValueError(f"unknown environment type {env_spec['type']!r}")
    pol_spec = spec["policy"]
    if pol_spec["type"] == "threshold":
        policy = threshold_policy(pol_spec.get("stand_at", 17))
    elif pol_spec["type"] == "scripted":
        policy = ScriptedPolicy([_decision_from_json(d) for d in pol_spec["decisions"]])
    else:
        raise ValueError(f"unknown policy type {pol_spec['type']!r}")
    return {
        "task": spec["task"],
        "actions": dict(spec["actions"]),
        "env": env,
        "policy": policy,
        "max_steps": int(spec.get("max_steps", DEFAULT_MAX_STEPS)),
    }
