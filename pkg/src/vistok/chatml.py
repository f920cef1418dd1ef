"""ChatML dialogue serialization with vision, grounding and agent-call segments.

A conversation is a sequence of :class:`Message` objects. Each message renders as::

    <|im_start|>ROLE\\nCONTENT<|im_end|>\\n

where CONTENT concatenates its segments. Visual references render between
``<|vision_start|>`` / ``<|vision_end|>``; grounded phrases as an object
reference immediately followed by a ``(x0,y0),(x1,y1)`` box on the 0..999
grid; agent calls with the ``*FUNCTION*`` / ``*ARGS*`` / ``*RESULT*`` /
``*RETURN*`` keyword protocol.

``parse`` inverts ``serialize`` for every conversation accepted by
:func:`validate_conversation`.
"""
from __future__ import annotations

import ast
import json
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import PurePosixPath
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

from .errors import (
    ArgsNotParseable,
    DegenerateBox,
    FormatError,
    InvalidConversation,
    MalformedBox,
    MismatchedVisionDelimiters,
    MissingKeyword,
    OutOfBounds,
    UnexpectedText,
    UnknownRole,
    UnterminatedMessage,
)

IM_START = "<|im_start|>"
IM_END = "<|im_end|>"
VISION_START = "<|vision_start|>"
VISION_END = "<|vision_end|>"
OBJECT_REF_START = "<|object_ref_start|>"
OBJECT_REF_END = "<|object_ref_end|>"
BOX_START = "<|box_start|>"
BOX_END = "<|box_end|>"
SPECIAL_TOKENS = (
    IM_START,
    IM_END,
    VISION_START,
    VISION_END,
    OBJECT_REF_START,
    OBJECT_REF_END,
    BOX_START,
    BOX_END,
)
ROLES = ("system", "user", "assistant")
KEYWORDS = ("FUNCTION", "ARGS", "RESULT", "RETURN")

VIDEO_EXTENSIONS = frozenset(
    {".mp4", ".avi", ".mov", ".mkv", ".webm", ".flv", ".wmv", ".m4v", ".mpg", ".mpeg", ".3gp"}
)

_CONTENT_TOKEN = re.compile(
    r"<\|(vision_start|vision_end|object_ref_start|object_ref_end|box_start|box_end)\|>"
)
_KEYWORD = re.compile(r"\*(FUNCTION|ARGS|RESULT|RETURN)\*:")
_BOX = re.compile(r"\s*\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)\s*,\s*\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)\s*")


@dataclass(frozen=True)
class NormalizedBox:
    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        coords = (self.x0, self.y0, self.x1, self.y1)
        if not all(isinstance(c, int) and not isinstance(c, bool) for c in coords):
            raise OutOfBounds(f"box coordinates must be integers, got {coords}")
        if not all(0 <= c <= 999 for c in coords):
            raise OutOfBounds(f"box coordinates must lie in [0, 999], got {coords}")
        if self.x0 > self.x1 or self.y0 > self.y1:
            raise OutOfBounds(f"box corners are not ordered: {coords}")

    def __str__(self):
        return f"({self.x0},{self.y0}),({self.x1},{self.y1})"

    def as_list(self) -> List[int]:
        return [self.x0, self.y0, self.x1, self.y1]


@dataclass(frozen=True)
class Text:
    text: str


@dataclass(frozen=True)
class ImageRef:
    path: str


@dataclass(frozen=True)
class VideoRef:
    path: str


@dataclass(frozen=True)
class ObjectRef:
    label: str
    box: NormalizedBox


@dataclass(frozen=True)
class AgentStep:
    """One function call. ``result``/``return_text`` are None when the keyword is absent."""

    function: str
    args: Dict[str, object] = field(default_factory=dict)
    result: Optional[Tuple["Segment", ...]] = None
    return_text: Optional[str] = None

    def __post_init__(self):
        if self.result is not None:
            object.__setattr__(self, "result", tuple(self.result))


Segment = Union[Text, ImageRef, VideoRef, ObjectRef, AgentStep]


@dataclass(frozen=True)
class Message:
    role: str
    segments: Tuple[Segment, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))


@dataclass(frozen=True)
class SupervisionMask:
    spans: Tuple[Tuple[int, int], ...] = ()

    def covered(self, text: str) -> List[str]:
        return [text[a:b] for a, b in self.spans]

    def as_bool(self, length: int) -> List[bool]:
        flags = [False] * length
        for a, b in self.spans:
            flags[a:b] = [True] * (b - a)
        return flags


@dataclass(frozen=True)
class MaskPolicy:
    """Which parts of a serialized conversation count as supervised.

    Assistant content and its closing ``<|im_end|>`` are always supervised;
    agent RESULT payloads come from the environment and are not.
    """

    im_start: bool = True
    non_assistant_im_end: bool = True
    agent_results: bool = False


Conversation = Sequence[Message]


# ---------------------------------------------------------------------------
# boxes and grounding


def _round_half_away(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2)) if x >= 0 else -math.floor(-x + Fraction(1, 2))


def normalize_box(px_box, img_w, img_h) -> NormalizedBox:
    """Quantize a pixel box ``(x0, y0, x1, y1)`` onto the 0..999 grid."""
    if img_w <= 0 or img_h <= 0:
        raise DegenerateBox(f"image extent {img_w}x{img_h} is empty")
    x0, y0, x1, y1 = px_box
    if x0 > x1 or y0 > y1:
        raise OutOfBounds(f"box corners are not ordered: {tuple(px_box)}")
    for v, extent in ((x0, img_w), (x1, img_w), (y0, img_h), (y1, img_h)):
        if not 0 <= v <= extent:
            raise OutOfBounds(f"coordinate {v} outside [0, {extent}]")

    def q(v, extent):
        n = _round_half_away(Fraction(v) * 1000 / Fraction(extent))
        return min(max(n, 0), 999)

    return NormalizedBox(q(x0, img_w), q(y0, img_h), q(x1, img_w), q(y1, img_h))


def render_grounding(label: str, box: NormalizedBox) -> str:
    return f"{OBJECT_REF_START}{label}{OBJECT_REF_END}{BOX_START}{box}{BOX_END}"


def _parse_box(inner: str, offset: int) -> NormalizedBox:
    m = _BOX.fullmatch(inner)
    if not m:
        raise MalformedBox(f"expected '(x0,y0),(x1,y1)', got {inner!r}", offset)
    try:
        return NormalizedBox(*map(int, m.groups()))
    except OutOfBounds as exc:
        raise MalformedBox(str(exc), offset) from None


def parse_grounding(text: str) -> List[Tuple[str, NormalizedBox]]:
    """All ``(label, box)`` annotations in ``text``, in order."""
    out = []
    pos = 0
    while True:
        start = text.find(OBJECT_REF_START, pos)
        box_at = text.find(BOX_START, pos)
        if box_at != -1 and (start == -1 or box_at < start):
            end = text.find(BOX_END, box_at)
            if end != -1:
                _parse_box(text[box_at + len(BOX_START) : end], box_at)
            raise MalformedBox("box without an object reference", box_at)
        if start == -1:
            return out
        label, box, pos = _read_grounding(text, start)
        out.append((label, box))


def _read_grounding(text: str, start: int) -> Tuple[str, NormalizedBox, int]:
    """Parse an annotation beginning at ``start``; returns label, box and end offset."""
    lab_start = start + len(OBJECT_REF_START)
    lab_end = text.find(OBJECT_REF_END, lab_start)
    if lab_end == -1:
        raise MalformedBox("object reference is never closed", start)
    label = text[lab_start:lab_end]
    if _CONTENT_TOKEN.search(label):
        raise MalformedBox("special token inside object reference", start)
    box_start = lab_end + len(OBJECT_REF_END)
    if not text.startswith(BOX_START, box_start):
        raise MalformedBox("object reference is not followed by a box", box_start)
    inner_start = box_start + len(BOX_START)
    box_end = text.find(BOX_END, inner_start)
    if box_end == -1:
        raise MalformedBox("box is never closed", box_start)
    box = _parse_box(text[inner_start:box_end], box_start)
    return label, box, box_end + len(BOX_END)


# ---------------------------------------------------------------------------
# agent arguments


def render_args(args: Dict[str, object]) -> str:
    def value(v):
        if isinstance(v, bool) or v is None:
            raise InvalidConversation(f"unsupported argument value {v!r}")
        if isinstance(v, int):
            return str(v)
        if isinstance(v, str):
            return json.dumps(v, ensure_ascii=False)
        if isinstance(v, tuple) and len(v) == 2 and all(
            isinstance(c, int) and not isinstance(c, bool) for c in v
        ):
            return f"({v[0]},{v[1]})"
        if isinstance(v, dict):
            return render_args(v)
        raise InvalidConversation(f"unsupported argument value {v!r}")

    for k in args:
        if not isinstance(k, str):
            raise InvalidConversation(f"argument keys must be strings, got {k!r}")
    return "{" + ", ".join(f"{json.dumps(k, ensure_ascii=False)}: {value(v)}" for k, v in args.items()) + "}"


def _check_arg_value(v) -> bool:
    if isinstance(v, bool):
        return False
    if isinstance(v, (int, str)):
        return True
    if isinstance(v, tuple):
        return len(v) == 2 and all(isinstance(c, int) and not isinstance(c, bool) for c in v)
    if isinstance(v, dict):
        return all(isinstance(k, str) and _check_arg_value(x) for k, x in v.items())
    return False


def parse_args(text: str, offset: int = 0) -> Dict[str, object]:
    """Parse an ``*ARGS*`` literal: a map of strings, integers, ``(x,y)`` pairs and maps."""
    try:
        value = ast.literal_eval(text.strip())
    except (ValueError, SyntaxError, MemoryError, RecursionError) as exc:
        raise ArgsNotParseable(f"cannot parse arguments {text.strip()!r}: {exc}", offset) from None
    if not isinstance(value, dict) or not _check_arg_value(value):
        raise ArgsNotParseable(f"arguments must be a map of literals, got {text.strip()!r}", offset)
    return value


# ---------------------------------------------------------------------------
# rendering


def _is_video(path: str) -> bool:
    return PurePosixPath(path).suffix.lower() in VIDEO_EXTENSIONS


class _Writer:
    def __init__(self):
        self.parts: List[str] = []
        self.length = 0
        self.spans: List[List[int]] = []

    def write(self, s: str, supervised: bool = False):
        if supervised and s:
            if self.spans and self.spans[-1][1] == self.length:
                self.spans[-1][1] += len(s)
            else:
                self.spans.append([self.length, self.length + len(s)])
        self.parts.append(s)
        self.length += len(s)

    def text(self) -> str:
        return "".join(self.parts)


def _write_segments(out: _Writer, segments, supervised: bool, policy: MaskPolicy):
    for seg in segments:
        if isinstance(seg, Text):
            out.write(seg.text, supervised)
        elif isinstance(seg, (ImageRef, VideoRef)):
            out.write(f"{VISION_START}{seg.path}{VISION_END}", supervised)
        elif isinstance(seg, ObjectRef):
            out.write(render_grounding(seg.label, seg.box), supervised)
        elif isinstance(seg, AgentStep):
            out.write(f"*FUNCTION*: {seg.function} *ARGS*: {render_args(seg.args)}", supervised)
            if seg.result is not None:
                out.write("\n*RESULT*:", supervised)
                sup_res = supervised and policy.agent_results
                out.write(" ", sup_res)
                _write_segments(out, seg.result, sup_res, policy)
            if seg.return_text is not None:
                out.write(f"\n*RETURN*: {seg.return_text}", supervised)
        else:
            raise InvalidConversation(f"unknown segment {seg!r}")


def render_content(segments: Sequence[Segment]) -> str:
    out = _Writer()
    _write_segments(out, segments, False, MaskPolicy())
    return out.text()


def serialize(conversation: Conversation, policy: MaskPolicy = MaskPolicy()) -> Tuple[str, SupervisionMask]:
    out = _Writer()
    for msg in conversation:
        if msg.role not in ROLES:
            raise InvalidConversation(f"unknown role {msg.role!r}")
        assistant = msg.role == "assistant"
        out.write(IM_START, policy.im_start)
        out.write(f"{msg.role}\n")
        _write_segments(out, msg.segments, assistant, policy)
        out.write(IM_END, assistant or policy.non_assistant_im_end)
        out.write("\n")
    return out.text(), SupervisionMask(tuple((a, b) for a, b in out.spans))


# ---------------------------------------------------------------------------
# parsing


def parse_content(text: str, offset: int = 0) -> List[Segment]:
    """Split message content into text, visual references and grounding annotations."""
    segments: List[Segment] = []
    buf: List[str] = []
    pos = 0

    def flush():
        joined = "".join(buf)
        if joined:
            segments.append(Text(joined))
        buf.clear()

    while True:
        m = _CONTENT_TOKEN.search(text, pos)
        if m is None:
            buf.append(text[pos:])
            break
        buf.append(text[pos : m.start()])
        kind = m.group(1)
        if kind == "vision_start":
            nxt = _CONTENT_TOKEN.search(text, m.end())
            if nxt is None:
                raise MismatchedVisionDelimiters("vision reference is never closed", offset + m.start())
            if nxt.group(1) != "vision_end":
                raise MismatchedVisionDelimiters(
                    f"<|{nxt.group(1)}|> inside a vision reference", offset + nxt.start()
                )
            path = text[m.end() : nxt.start()]
            flush()
            segments.append(VideoRef(path) if _is_video(path) else ImageRef(path))
            pos = nxt.end()
        elif kind == "vision_end":
            raise MismatchedVisionDelimiters("<|vision_end|> without <|vision_start|>", offset + m.start())
        elif kind == "object_ref_start":
            try:
                label, box, pos = _read_grounding(text, m.start())
            except MalformedBox as exc:
                raise MalformedBox(exc.message, offset + exc.offset) from None
            flush()
            segments.append(ObjectRef(label, box))
        else:
            raise MalformedBox(f"unexpected <|{kind}|>", offset + m.start())
    flush()
    return segments


def _line_end(text: str, start: int, limit: int) -> int:
    nl = text.find("\n", start, limit)
    return limit if nl == -1 else nl


def _strip_one_space(s: str) -> str:
    return s[1:] if s.startswith(" ") else s


def _scan_steps(text: str, offset: int = 0) -> List[Tuple[int, int, AgentStep, Optional[Tuple[int, int]]]]:
    """Locate agent steps; returns (start, end, step-without-result-segments, result span)."""
    toks = list(_KEYWORD.finditer(text))
    steps = []
    i = 0
    while i < len(toks):
        m = toks[i]
        if m.group(1) != "FUNCTION":
            raise MissingKeyword(f"*{m.group(1)}* before *FUNCTION*", offset + m.start())
        if i + 1 >= len(toks) or toks[i + 1].group(1) != "ARGS":
            at = toks[i + 1].start() if i + 1 < len(toks) else len(text)
            raise MissingKeyword("*FUNCTION* must be followed by *ARGS*", offset + at)
        a = toks[i + 1]
        name = text[m.end() : a.start()].strip()
        if not name or "\n" in name or any(c.isspace() for c in name):
            raise MissingKeyword("*ARGS* must follow a single function name on the same line", offset + a.start())
        nxt = toks[i + 2].start() if i + 2 < len(toks) else len(text)
        args_end = _line_end(text, a.end(), nxt)
        args = parse_args(text[a.end() : args_end], offset + a.end())
        end = args_end
        result_span = None
        return_text = None
        j = i + 2
        if j < len(toks) and toks[j].group(1) == "RESULT" and not text[args_end : toks[j].start()].strip():
            r = toks[j]
            k = j + 1
            if k < len(toks) and toks[k].group(1) == "RETURN":
                res_end = toks[k].start()
                if text[res_end - 1 : res_end] == "\n":
                    res_end -= 1
                result_span = (r.end(), res_end)
                limit = toks[k + 1].start() if k + 1 < len(toks) else len(text)
                end = _line_end(text, toks[k].end(), limit)
                return_text = _strip_one_space(text[toks[k].end() : end])
                j = k + 1
            elif k < len(toks):
                raise MissingKeyword(
                    f"*RESULT* must be followed by *RETURN* before *{toks[k].group(1)}*",
                    offset + toks[k].start(),
                )
            else:
                result_span = (r.end(), len(text))
                end = len(text)
                j = k
        elif j < len(toks) and toks[j].group(1) != "FUNCTION":
            raise MissingKeyword(f"*{toks[j].group(1)}* without *RESULT*", offset + toks[j].start())
        elif j < len(toks):
            raise MissingKeyword("step without *RESULT* followed by another step", offset + toks[j].start())
        steps.append((m.start(), end, AgentStep(name, args, None, return_text), result_span))
        i = j
    return steps


def _parse_assistant_content(text: str, offset: int) -> List[Segment]:
    segments: List[Segment] = []
    pos = 0
    for start, end, step, span in _scan_steps(text, offset):
        if start > pos:
            segments.extend(parse_content(text[pos:start], offset + pos))
        if span is not None:
            raw = text[span[0] : span[1]]
            body = _strip_one_space(raw)
            body_off = offset + span[0] + (len(raw) - len(body))
            step = AgentStep(step.function, step.args, tuple(parse_content(body, body_off)), step.return_text)
        segments.append(step)
        pos = end
    if pos < len(text):
        segments.extend(parse_content(text[pos:], offset + pos))
    return segments


def parse(text: str) -> List[Message]:
    """Parse serialized ChatML back into messages."""
    messages: List[Message] = []
    pos = 0
    n = len(text)
    while pos < n:
        if not text.startswith(IM_START, pos):
            if not text[pos:].strip():
                break
            raise UnexpectedText("text outside <|im_start|> ... <|im_end|>", pos)
        start = pos
        body = pos + len(IM_START)
        end = text.find(IM_END, body)
        reopen = text.find(IM_START, body)
        if end == -1 or (reopen != -1 and reopen < end):
            raise UnterminatedMessage("message has no <|im_end|>", start)
        nl = text.find("\n", body, end)
        if nl == -1:
            raise UnknownRole("role line is not terminated by a newline", body)
        role = text[body:nl]
        if role not in ROLES:
            raise UnknownRole(f"unknown role {role!r}", body)
        content = text[nl + 1 : end]
        if role == "assistant":
            segments = _parse_assistant_content(content, nl + 1)
        else:
            segments = parse_content(content, nl + 1)
        messages.append(Message(role, tuple(segments)))
        pos = end + len(IM_END)
        if text.startswith("\n", pos):
            pos += 1
    return messages


def parse_agent_transcript(text: str) -> List[AgentStep]:
    """Agent steps, in order, from assistant turns of a ChatML transcript or from raw text."""
    if IM_START in text:
        return [
            seg
            for msg in parse(text)
            if msg.role == "assistant"
            for seg in msg.segments
            if isinstance(seg, AgentStep)
        ]
    return [seg for seg in _parse_assistant_content(text, 0) if isinstance(seg, AgentStep)]


# ---------------------------------------------------------------------------
# validation


def _has_special(s: str) -> bool:
    return any(tok in s for tok in SPECIAL_TOKENS)


def validate_conversation(conversation: Conversation) -> None:
    """Raise :class:`InvalidConversation` unless ``parse(serialize(c)) == c`` is guaranteed."""
    for mi, msg in enumerate(conversation):
        where = f"message {mi}"
        if msg.role not in ROLES:
            raise InvalidConversation(f"{where}: unknown role {msg.role!r}")
        _validate_segments(msg.segments, where, assistant=msg.role == "assistant", nested=False)


def _validate_segments(segments, where, assistant, nested):
    prev = None
    for si, seg in enumerate(segments):
        at = f"{where}, segment {si}"
        if isinstance(prev, AgentStep) and not (isinstance(seg, Text) and seg.text.startswith("\n")):
            raise InvalidConversation(f"{at}: text after an agent step must start with a newline")
        if isinstance(seg, Text):
            if not seg.text:
                raise InvalidConversation(f"{at}: empty text")
            if isinstance(prev, Text):
                raise InvalidConversation(f"{at}: adjacent text segments")
            if _has_special(seg.text):
                raise InvalidConversation(f"{at}: special token inside text")
            if (assistant or nested) and _KEYWORD.search(seg.text):
                raise InvalidConversation(f"{at}: agent keyword inside text")
        elif isinstance(seg, (ImageRef, VideoRef)):
            if not seg.path or _has_special(seg.path) or ((assistant or nested) and _KEYWORD.search(seg.path)):
                raise InvalidConversation(f"{at}: bad path {seg.path!r}")
            if _is_video(seg.path) != isinstance(seg, VideoRef):
                raise InvalidConversation(f"{at}: extension of {seg.path!r} does not match {type(seg).__name__}")
        elif isinstance(seg, ObjectRef):
            if not seg.label or _has_special(seg.label) or ((assistant or nested) and _KEYWORD.search(seg.label)):
                raise InvalidConversation(f"{at}: bad label {seg.label!r}")
            if not isinstance(seg.box, NormalizedBox):
                raise InvalidConversation(f"{at}: box must be a NormalizedBox")
        elif isinstance(seg, AgentStep):
            if not assistant or nested:
                raise InvalidConversation(f"{at}: agent steps only appear in assistant turns")
            name = seg.function
            if not name or any(c.isspace() for c in name) or "*" in name or _has_special(name):
                raise InvalidConversation(f"{at}: bad function name {name!r}")
            if not _check_arg_value(seg.args) or not isinstance(seg.args, dict):
                raise InvalidConversation(f"{at}: bad arguments {seg.args!r}")
            rendered = render_args(seg.args)
            if "\n" in rendered or _KEYWORD.search(rendered) or _has_special(rendered):
                raise InvalidConversation(f"{at}: arguments cannot be rendered on one line")
            if seg.result is None and seg.return_text is not None:
                raise InvalidConversation(f"{at}: *RETURN* requires *RESULT*")
            if seg.result is not None:
                _validate_segments(seg.result, at + " result", assistant=False, nested=True)
            if seg.return_text is not None:
                rt = seg.return_text
                if "\n" in rt or _KEYWORD.search(rt) or _has_special(rt):
                    raise InvalidConversation(f"{at}: bad return text {rt!r}")
            if seg.result is not None and seg.return_text is None and si != len(segments) - 1:
                raise InvalidConversation(f"{at}: a step without *RETURN* must end the message")
            if seg.result is None and any(isinstance(s, AgentStep) for s in segments[si + 1 :]):
                raise InvalidConversation(f"{at}: a step without *RESULT* must be the last step")
        else:
            raise InvalidConversation(f"{at}: unknown segment {seg!r}")
        prev = seg


# ---------------------------------------------------------------------------
# structured dataset records


def _args_to_json(v):
    if isinstance(v, tuple):
        return list(v)
    if isinstance(v, dict):
        return {k: _args_to_json(x) for k, x in v.items()}
    return v


def _args_from_json(v):
    if isinstance(v, list):
        if len(v) != 2:
            raise InvalidConversation(f"only (x,y) pairs may be lists, got {v!r}")
        return tuple(v)
    if isinstance(v, dict):
        return {k: _args_from_json(x) for k, x in v.items()}
    return v


def segment_to_json(seg: Segment) -> dict:
    if isinstance(seg, Text):
        return {"type": "text", "text": seg.text}
    if isinstance(seg, ImageRef):
        return {"type": "image", "path": seg.path}
    if isinstance(seg, VideoRef):
        return {"type": "video", "path": seg.path}
    if isinstance(seg, ObjectRef):
        return {"type": "object_ref", "label": seg.label, "box": seg.box.as_list()}
    if isinstance(seg, AgentStep):
        return {
            "type": "agent_step",
            "function": seg.function,
            "args": _args_to_json(seg.args),
            "result": None if seg.result is None else [segment_to_json(s) for s in seg.result],
            "return": seg.return_text,
        }
    raise InvalidConversation(f"unknown segment {seg!r}")


def segment_from_json(obj: dict) -> Segment:
    try:
        kind = obj["type"]
        if kind == "text":
            return Text(obj["text"])
        if kind == "image":
            return ImageRef(obj["path"])
        if kind == "video":
            return VideoRef(obj["path"])
        if kind == "object_ref":
            return ObjectRef(obj["label"], NormalizedBox(*obj["box"]))
        if kind == "agent_step":
            result = obj.get("result")
            return AgentStep(
                obj["function"],
                _args_from_json(obj.get("args", {})),
                None if result is None else tuple(segment_from_json(s) for s in result),
                obj.get("return"),
            )
    except (KeyError, TypeError) as exc:
        raise InvalidConversation(f"malformed segment {obj!r}: {exc}") from None
    except OutOfBounds as exc:
        raise InvalidConversation(f"malformed box in {obj!r}: {exc}") from None
    raise InvalidConversation(f"unknown segment type {obj.get('type')!r}")


def conversation_to_json(conversation: Conversation) -> dict:
    return {
        "messages": [
            {"role": m.role, "content": [segment_to_json(s) for s in m.segments]} for m in conversation
        ]
    }


def conversation_from_json(obj: dict) -> List[Message]:
    try:
        msgs = obj["messages"]
        return [Message(m["role"], tuple(segment_from_json(s) for s in m["content"])) for m in msgs]
    except (KeyError, TypeError) as exc:
        raise InvalidConversation(f"malformed record: {exc}") from None


def decode_record(line: str) -> List[Message]:
    """Decode one dataset line: ``{"messages": [...]}`` or ``{"chatml": "<serialized>"}``.

    The result is validated; JSON, parse and validation errors propagate.
    """
    record = json.loads(line)
    if not isinstance(record, dict):
        raise InvalidConversation("record must be a JSON object")
    if "chatml" in record:
        conv = parse(record["chatml"])
    else:
        conv = conversation_from_json(record)
    validate_conversation(conv)
    return conv


def iter_dataset(lines) -> Iterator[Tuple[int, List[Message]]]:
    """Yield ``(line_number, conversation)`` for every non-blank line."""
    for lineno, line in enumerate(lines, 1):
        if line.strip():
            yield lineno, decode_record(line)
