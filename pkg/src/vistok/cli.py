"""Command-line entry point: ``vistok {resize,positions,pack,validate,agent-sim}``.

Exit status is 0 on success, 1 when the input fails validation, 2 on usage
errors (argparse's own convention). ``--json`` switches any command to a
machine-readable payload.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import List, Optional

from . import chatml
from .agent import load_scenario, simulate_episode
from .errors import FormatError, InvalidConversation, VistokError
from .mrope import assign_positions, max_position, parse_segment_spec, with_vision_delimiters
from .packing import PackItem, bin_stats, pack
from .resize import ResizeSpec, fixed_token_resize, plan_video, smart_resize, token_count


class UsageError(Exception):
    pass


def fixtures_dir() -> Path:
    env = os.environ.get("VISTOK_FIXTURES")
    return Path(env) if env else Path(__file__).parent / "fixtures"


def _emit(payload: dict, as_json: bool, human: str) -> None:
    if as_json:
        sys.stdout.write(json.dumps(payload, indent=2, ensure_ascii=False) + "\n")
    else:
        sys.stdout.write(human)


def _kv(pairs) -> str:
    return "".join(f"{k}: {v}\n" for k, v in pairs)


def cmd_resize(args) -> int:
    try:
        spec = ResizeSpec(
            patch_size=args.patch_size,
            merge_size=args.merge_size,
            min_pixels=args.min_pixels,
            max_pixels=args.max_pixels,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    payload = {"command": "resize", "source_h": args.height, "source_w": args.width}
    if args.frames is not None:
        plan = plan_video(args.frames, args.fps, args.height, args.width, spec)
        payload.update(plan.as_dict())
        payload["tubes"] = plan.padded_frame_count // spec.temporal_patch
        payload["total_merged"] = plan.total_merged_tokens(spec)
        th, tw = plan.target_h, plan.target_w
    elif args.fixed_tokens is not None:
        th, tw = fixed_token_resize(args.height, args.width, args.fixed_tokens, spec)
        payload["requested_tokens"] = args.fixed_tokens
    else:
        th, tw = smart_resize(args.height, args.width, spec)
    payload["target_h"], payload["target_w"] = th, tw
    payload.update(token_count(th, tw, spec).as_dict())
    skip = ("command", "sampled_frame_indices")
    _emit(payload, args.json, _kv((k, v) for k, v in payload.items() if k not in skip))
    return 0


def cmd_positions(args) -> int:
    try:
        segments = parse_segment_spec(args.spec)
    except ValueError as exc:
        raise UsageError(f"bad --spec: {exc}") from None
    if args.delimiters:
        segments = with_vision_delimiters(segments)
    plan = assign_positions(segments)
    m, seq = max_position(plan), len(plan) - 1
    payload = {
        "command": "positions",
        "positions": plan.ids.tolist(),
        "max_position": m,
        "sequential_max_position": seq,
    }
    _emit(payload, args.json, plan.dumps() + _kv([("max_position", m), ("sequential_max_position", seq)]))
    return 0


def _read_pack_items(args) -> List[PackItem]:
    if args.lengths is not None:
        raw = [x.strip() for x in args.lengths.split(",") if x.strip()]
        try:
            return [PackItem(i, int(x)) for i, x in enumerate(raw)]
        except ValueError as exc:
            raise UsageError(f"bad --lengths: {exc}") from None
    try:
        lines = Path(args.dataset).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read {args.dataset}: {exc}") from None
    items = []
    for n, line in enumerate(lines):
        if not line.strip():
            continue
        rec = json.loads(line)
        if "length" in rec:
            items.append(PackItem(rec.get("id", n), int(rec["length"])))
        else:
            # a conversation record: pack it by serialized character length
            conv = chatml.decode_record(line)
            items.append(PackItem(rec.get("id", n), len(chatml.serialize(conv)[0])))
    return items


def cmd_pack(args) -> int:
    items = _read_pack_items(args)
    batch = pack(items, args.budget)
    stats = bin_stats(batch)
    payload = {
        "command": "pack",
        "budget": batch.budget,
        "bins": batch.bin_lengths,
        "bin_ids": batch.bin_ids,
        **stats,
    }
    lines = [f"bin {i}: lengths={lens} ids={ids} fill={fill:.4f}"
             for i, (lens, ids, fill) in enumerate(zip(batch.bin_lengths, batch.bin_ids, stats["fill_ratios"]))]
    human = "".join(line + "\n" for line in lines) + _kv(
        [("bin_count", stats["bin_count"]), ("waste", f"{stats['waste']:.4f}")]
    )
    _emit(payload, args.json, human)
    return 0


def cmd_validate(args) -> int:
    try:
        lines = Path(args.dataset).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read {args.dataset}: {exc}") from None
    results = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        entry = {"line": lineno, "ok": True}
        try:
            conv = chatml.decode_record(line)
            text, _ = chatml.serialize(conv)
            if chatml.parse(text) != conv:
                raise InvalidConversation("serialize/parse round trip changed the record")
        except FormatError as exc:
            entry.update(ok=False, error=type(exc).__name__, offset=exc.offset, message=exc.message)
        except json.JSONDecodeError as exc:
            entry.update(ok=False, error="JSONDecodeError", offset=exc.pos, message=exc.msg)
        except (InvalidConversation, VistokError) as exc:
            entry.update(ok=False, error=type(exc).__name__, offset=None, message=str(exc))
        results.append(entry)
    failed = sum(not r["ok"] for r in results)
    payload = {"command": "validate", "records": len(results), "failed": failed, "results": results}
    human = []
    for r in results:
        if r["ok"]:
            human.append(f"line {r['line']}: ok\n")
        else:
            human.append(f"line {r['line']}: FAIL {r['error']} at offset {r['offset']}: {r['message']}\n")
    _emit(payload, args.json, "".join(human) + _kv([("records", len(results)), ("failed", failed)]))
    return 1 if failed else 0


def _resolve_scenario(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    for cand in (fixtures_dir() / name, fixtures_dir() / f"{name}.json", fixtures_dir() / f"scenario_{name}.json"):
        if cand.exists():
            return cand
    raise UsageError(f"scenario {name!r} not found")


def cmd_agent_sim(args) -> int:
    path = _resolve_scenario(args.scenario)
    try:
        sc = load_scenario(path)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load scenario {path}: {exc}") from None
    episode = simulate_episode(sc["task"], sc["actions"], sc["env"], sc["policy"], sc["max_steps"])
    final = episode.final_observation
    payload = {
        "command": "agent-sim",
        "scenario": path.stem,
        "actions": [{"function": f, "args": chatml._args_to_json(a)} for f, a in episode.actions],
        "outcome": final.info.get("outcome"),
        "done": final.done,
        "transcript": episode.transcript(),
    }
    summary = [("actions", ", ".join(f"{f}{chatml.render_args(a)}" for f, a in episode.actions))]
    if payload["outcome"]:
        summary.append(("outcome", payload["outcome"]))
    _emit(payload, args.json, payload["transcript"] + _kv(summary))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="emit a JSON payload")

    parser = argparse.ArgumentParser(prog="vistok", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("resize", parents=[common], help="plan target size and token count")
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--min-pixels", type=int, default=ResizeSpec.min_pixels)
    p.add_argument("--max-pixels", type=int, default=ResizeSpec.max_pixels)
    p.add_argument("--patch-size", type=int, default=ResizeSpec.patch_size)
    p.add_argument("--merge-size", type=int, default=ResizeSpec.merge_size)
    p.add_argument("--fixed-tokens", type=int, help="resize to about N merged tokens instead")
    p.add_argument("--frames", type=int, help="plan a video with this many source frames")
    p.add_argument("--fps", type=float, default=30.0, help="native frame rate for --frames")
    p.set_defaults(func=cmd_resize)

    p = sub.add_parser("positions", parents=[common], help="dump M-RoPE position IDs")
    p.add_argument("--spec", required=True, help='segments, e.g. "text:3,image:1x2x2,video:2x4x4"')
    p.add_argument("--delimiters", action="store_true", help="add vision start/end tokens around visuals")
    p.set_defaults(func=cmd_positions)

    p = sub.add_parser("pack", parents=[common], help="first-fit-decreasing sequence packing")
    p.add_argument("--budget", type=int, required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--lengths", help="comma-separated item lengths")
    src.add_argument("--dataset", help="JSONL with {id, length} or conversation records")
    p.set_defaults(func=cmd_pack)

    p = sub.add_parser("validate", parents=[common], help="check a ChatML dataset file")
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("agent-sim", parents=[common], help="run a scripted agent scenario")
    p.add_argument("--scenario", required=True, help="scenario JSON path or fixture name")
    p.set_defaults(func=cmd_agent_sim)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"vistok {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except VistokError as exc:
        print(f"vistok {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
