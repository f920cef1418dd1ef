"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -s`` to see the lines inline; they are
also repeated in the terminal summary of any pytest run.
"""
import math
from collections import Counter
from importlib import resources

import numpy as np
from hypothesis import HealthCheck, given, settings

from conftest import ACCEPTANCE_LINES, best_aspect_deviation, optimal_bins
from strategies import conversations
from vistok.agent import load_scenario, simulate_episode
from vistok.attention import (
    AttentionCase,
    extrapolation_probe,
    score_grad_key,
    score_grad_query,
    score_matrix,
    score_matrix_1d,
)
from vistok.chatml import (
    AgentStep,
    ImageRef,
    Message,
    NormalizedBox,
    ObjectRef,
    Text,
    VideoRef,
    parse,
    parse_agent_transcript,
    render_content,
    serialize,
)
from vistok.mrope import ImageSegment, RotaryConfig, TextSegment, VideoSegment, apply_rotary, assign_positions, max_position
from vistok.packing import PackItem, pack, pack_lengths
from vistok.patchify import PatchGrid
from vistok.resize import ResizeSpec, plan_video, smart_resize, token_count

FIXTURES = resources.files("vistok") / "fixtures"
SPEC = ResizeSpec()


def report(n, ok, detail):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def test_criterion_01_token_count_anchor():
    tc = token_count(224, 224, SPEC)
    report(1, tc.with_delimiters == 66, f"224x224 -> {tc.patches} patches, {tc.merged} merged, {tc.with_delimiters} with delimiters")


def _random_dims(rng, n, lo=1, hi=20000, max_ratio=200):
    out = []
    while len(out) < n:
        h, w = np.exp(rng.uniform(math.log(lo), math.log(hi), size=2)).astype(int)
        h, w = max(int(h), 1), max(int(w), 1)
        if max(h, w) <= max_ratio * min(h, w):
            out.append((h, w))
    return out


def test_criterion_02_dynamic_resolution_bounds():
    rng = np.random.default_rng(2)
    dims = _random_dims(rng, 10000)
    bad = []
    for h, w in dims:
        th, tw = smart_resize(h, w, SPEC)
        if th % 28 or tw % 28 or not SPEC.min_pixels <= th * tw <= SPEC.max_pixels:
            bad.append((h, w, th, tw))
    worst = -math.inf
    for h, w in dims[:1000]:
        th, tw = smart_resize(h, w, SPEC)
        dev = abs(math.log(th / tw) - math.log(h / w))
        worst = max(worst, dev - best_aspect_deviation(h, w))
    ok = not bad and worst <= math.log(2)
    report(2, ok, f"10000 sizes, {len(bad)} out of bounds; worst aspect excess over optimum {worst:.4f} (limit {math.log(2):.4f})")


def test_criterion_03_text_only_equivalence():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 513))
        d = int(rng.choice([32, 64, 128]))
        q, k = rng.normal(size=(2, n, d))
        case = AttentionCase(q, k, assign_positions([TextSegment(n)]), RotaryConfig(head_dim=d))
        diff = np.abs(score_matrix(case) - score_matrix_1d(q, k, np.arange(n), d)).max()
        worst = max(worst, float(diff))
    report(3, worst <= 1e-9, f"100 text-only cases, max |M-RoPE - 1D| = {worst:.2e} (limit 1e-9)")


def _random_segments(rng):
    segs = []
    for _ in range(int(rng.integers(1, 6))):
        kind = rng.integers(3)
        if kind == 0:
            segs.append(TextSegment(int(rng.integers(1, 20))))
        elif kind == 1:
            segs.append(ImageSegment(PatchGrid(1, *map(int, rng.integers(1, 7, size=2)))))
        else:
            segs.append(VideoSegment(PatchGrid(*map(int, rng.integers(1, 5, size=3)))))
    return segs


def test_criterion_04_shift_invariance():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        plan = assign_positions(_random_segments(rng))
        d = int(rng.choice([32, 64, 128]))
        q, k = rng.normal(size=(2, len(plan), d))
        cfg = RotaryConfig(head_dim=d)
        base = score_matrix(AttentionCase(q, k, plan, cfg))
        for c in (1, 17, 1000):
            moved = score_matrix(AttentionCase(q, k, plan.shifted(c), cfg))
            worst = max(worst, float(np.abs(moved - base).max()))
    report(4, worst <= 1e-6, f"100 mixed cases x shifts {{1,17,1000}}, max score change {worst:.2e} (limit 1e-6)")


def test_criterion_05_id_reduction_and_probe():
    cfg = RotaryConfig(head_dim=128)
    results = []
    for base in (0, 10):
        segs = ([TextSegment(base)] if base else []) + [VideoSegment(PatchGrid(64, 16, 16))]
        plan = assign_positions(segs)
        results.append((max_position(plan), len(plan) - 1, base))
    ids_ok = all(m == b + 63 and s == b + 16383 for m, s, b in results)
    probe = extrapolation_probe(cfg, assign_positions([TextSegment(5), VideoSegment(PatchGrid(320, 16, 16))]))
    probe_ok = probe["finite"] and probe["sequential_max_id"] >= 80000 and probe["max_id"] < 1000
    detail = (
        f"64x16x16 video max_position {results[0][0]}/{results[1][0]} vs 1D {results[0][1]}/{results[1][1]} at base 0/10; "
        f"{probe['sequential_max_id'] + 1}-token probe max_id {probe['max_id']}, finite={probe['finite']}"
    )
    report(5, ids_ok and probe_ok, detail)


def test_criterion_06_video_budget():
    rng = np.random.default_rng(6)
    over, frame_err = 0, 0.0
    for _ in range(1000):
        fps = float(rng.uniform(2, 60))
        duration = float(np.exp(rng.uniform(math.log(0.5), math.log(7200))))
        frames = max(1, int(duration * fps))
        h, w = _random_dims(rng, 1, lo=16, hi=4000, max_ratio=20)[0]
        plan = plan_video(frames, fps, h, w, SPEC)
        if plan.total_merged_tokens(SPEC) > 16384:
            over += 1
        frame_err = max(frame_err, abs(len(plan.sampled_frame_indices) - frames / fps * 2))
    ok = over == 0 and frame_err <= 1
    report(6, ok, f"1000 videos, {over} over 16384 tokens; max |sampled - 2*duration| = {frame_err:.3f} frames (limit 1)")


def test_criterion_07_orthogonality_and_gradient():
    rng = np.random.default_rng(7)
    norm_err = 0.0
    for d in (32, 64, 128):
        cfg = RotaryConfig(head_dim=d)
        v = rng.normal(size=(3334, d))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        p = rng.integers(0, 100000, size=(3334, 3))
        out = apply_rotary(v, p, cfg)
        norm_err = max(norm_err, float(np.abs(np.linalg.norm(out, axis=1) - 1).max()))
    grad_err, h = 0.0, 1e-5
    for _ in range(100):
        plan = assign_positions(_random_segments(rng))
        d = int(rng.choice([32, 64, 128]))
        q, k = rng.normal(size=(2, len(plan), d))
        case = AttentionCase(q, k, plan, RotaryConfig(head_dim=d))
        i, j, ch = int(rng.integers(len(plan))), int(rng.integers(len(plan))), int(rng.integers(d))
        for which, grad in (("q", score_grad_query(case, i, j)), ("k", score_grad_key(case, i, j))):
            vals = []
            for sign in (1, -1):
                qq, kk = q.copy(), k.copy()
                (qq[i] if which == "q" else kk[j])[ch] += sign * h
                vals.append(score_matrix(AttentionCase(qq, kk, plan, case.cfg))[i, j])
            fd = (vals[0] - vals[1]) / (2 * h)
            grad_err = max(grad_err, abs(fd - grad[ch]) / abs(grad[ch]))
    ok = norm_err <= 1e-12 and grad_err <= 1e-5
    report(7, ok, f"10002 unit vectors max norm error {norm_err:.2e} (limit 1e-12); 100 cases max FD relative error {grad_err:.2e} (limit 1e-5)")


def test_criterion_08_packer():
    rng = np.random.default_rng(8)
    bound_fail = 0
    worst_ratio = 0.0
    for _ in range(2000):
        budget = int(rng.integers(1, 40))
        lengths = rng.integers(1, budget + 1, size=int(rng.integers(0, 11))).tolist()
        opt = optimal_bins(lengths, budget)
        got = len(pack_lengths(lengths, budget).bins)
        if got > math.ceil(11 / 9 * opt) + 1:
            bound_fail += 1
        if opt:
            worst_ratio = max(worst_ratio, got / opt)
    invariant_fail = 0
    for _ in range(10000):
        budget = int(rng.integers(1, 4096))
        lengths = rng.integers(1, budget + 1, size=int(rng.integers(0, 60)))
        items = [PackItem(f"s{n}", int(x)) for n, x in enumerate(lengths)]
        batch = pack(items, budget)
        if Counter(i for b in batch.bin_ids for i in b) != Counter(it.id for it in items):
            invariant_fail += 1
        elif any(load > budget for load in batch.loads()):
            invariant_fail += 1
    ok = bound_fail == 0 and invariant_fail == 0
    report(8, ok, f"2000 exhaustive instances, {bound_fail} over ceil(11/9 OPT)+1 (worst FFD/OPT {worst_ratio:.3f}); 10000 instances, {invariant_fail} invariant failures")


SYSTEM_PROMPT = "\n".join(
    [
        "You are a helpful assistant.",
        "# Actions",
        "## You have the following actions.",
        "### Tap",
        "Tap: A gentle tap that commands, chooses, or navigates through a smartphone's user interface. "
        'Parameters: [{"name": "point", "description": "The specific spot of interest on the monitor, '
        'denoted by the coordinates (x, y) where x and y range from 0 to 1000.", "required": True}]',
        "### Home",
        "Home: Go to phone's home screen. Parameters: []",
        "### Other Actions ...",
        "## Continuously take action until the task is completed.",
        "*FUNCTION*: The action to take, should be one of {Actions}.",
        "*ARGS*: The input of the action.",
        "*RESULT*: Action results.",
        "*RETURN*: Reply based on action results. ",
    ]
)

VISUAL_AGENT = [
    Message("system", (Text(SYSTEM_PROMPT),)),
    Message("user", (Text("Find a pizza restaurant nearby in Map. "), ImageRef("Screenshot_1.jpg"), Text(" "))),
    Message(
        "assistant",
        (
            Text(
                "Several e-mails are displaying on the phone screen. To open Map, I need go back to the "
                "home screen and find the corresponding app icon.\n"
            ),
            AgentStep(
                "Home",
                {},
                (ImageRef("Screenshot_2.jpg"),),
                "I return to the home screen. Next, I need to find the icon of Map and tap on it.",
            ),
            Text("\n"),
            AgentStep("Tap", {"point": (348, 291)}, (ImageRef("Screenshot_3.jpg"),), "[Thinking for the next action.]"),
            Text("\n[Other subsequent actions.] ......\nI have found the pizza restaurant nearby in Map. "),
        ),
    ),
]

def _dialogue():
    return [
        Message("user", (ImageRef("Picture1.jpg"), ImageRef("Picture2.jpg"), Text("What do the two pictures have in common?"))),
        Message("assistant", (Text("Both pictures are of SpongeBob SquarePants. "),)),
        Message("user", (Text("What is happening in the video?"), VideoRef("video.mp4"))),
        Message("assistant", (Text("The protagonist in the video is frying an egg."),)),
    ]


def test_criterion_09_format_goldens():
    checks = {}
    checks["chatml"] = serialize(_dialogue())[0] == (FIXTURES / "chatml_dialogue.txt").read_text(encoding="utf-8")
    grounding = render_content((ImageRef("Picture1.jpg"), Text("\n"), ObjectRef("the eyes on a giraffe", NormalizedBox(176, 106, 232, 160))))
    checks["grounding"] = grounding == (FIXTURES / "grounding.txt").read_text(encoding="utf-8")
    checks["agent"] = serialize(VISUAL_AGENT)[0] == (FIXTURES / "visual_agent.txt").read_text(encoding="utf-8")

    seen = []

    @settings(max_examples=1000, derandomize=True, database=None, deadline=None, suppress_health_check=list(HealthCheck))
    @given(conversations)
    def round_trip(conv):
        seen.append(parse(serialize(conv)[0]) == list(conv))

    round_trip()
    rt_ok = len(seen) >= 1000 and all(seen)
    ok = all(checks.values()) and rt_ok
    golden = ", ".join(f"{k}={'ok' if v else 'MISMATCH'}" for k, v in checks.items())
    report(9, ok, f"goldens {golden}; round trip {sum(seen)}/{len(seen)} conversations")


def test_criterion_10_agent_loop():
    got = {}
    for name in ("pizza", "blackjack"):
        sc = load_scenario(FIXTURES / f"scenario_{name}.json")
        ep = simulate_episode(sc["task"], sc["actions"], sc["env"], sc["policy"], sc["max_steps"])
        parsed = [(s.function, s.args) for s in parse_agent_transcript(ep.transcript())]
        got[name] = (ep, parsed)
    pizza, pizza_parsed = got["pizza"]
    bj, bj_parsed = got["blackjack"]
    pizza_ok = (
        pizza.actions[:2] == [("Home", {}), ("Tap", {"point": (348, 291)})]
        and pizza.actions[-1][0] == "Done"
        and pizza_parsed == pizza.actions
    )
    report_text = bj.final_observation.segments[0].text
    bj_ok = (
        [f for f, _ in bj.actions] == ["Hit", "Hit", "Stand"]
        and bj_parsed == bj.actions
        and report_text
        == "Dealer Card: Q, 5, Q. The total point of dealer is 25 > 21.\n"
        "Player Card: 4, 4, 7, 2. The total point of player is 17.\nPlayer win!"
    )
    detail = (
        f"pizza {[f for f, _ in pizza.actions]}; blackjack {[f for f, _ in bj.actions]} -> "
        f"{bj.final_observation.info.get('outcome')}"
    )
    report(10, pizza_ok and bj_ok, detail)
