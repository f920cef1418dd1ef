"""Hypothesis strategies for conversations accepted by ``validate_conversation``."""
from hypothesis import strategies as st

from vistok.chatml import (
    AgentStep,
    ImageRef,
    Message,
    NormalizedBox,
    ObjectRef,
    Text,
    VideoRef,
    validate_conversation,
)
from vistok.errors import InvalidConversation

# near-misses of the special syntax on purpose
ALPHABET = "ab yz\n.,:;()[]{}'\"*<|>_-01é"

coord = st.integers(0, 999)
boxes = st.tuples(coord, coord, coord, coord).map(
    lambda c: NormalizedBox(min(c[0], c[2]), min(c[1], c[3]), max(c[0], c[2]), max(c[1], c[3]))
)
words = st.text(ALPHABET, min_size=1, max_size=12)
names = st.text("abcXYZ_09", min_size=1, max_size=6)
line = st.text(ALPHABET.replace("\n", ""), max_size=12)

images = st.builds(lambda s: ImageRef(s + ".jpg"), names)
videos = st.builds(lambda s, e: VideoRef(s + e), names, st.sampled_from([".mp4", ".MOV", ".webm"]))
objects = st.builds(ObjectRef, words, boxes)
plain = st.one_of(st.builds(Text, words), images, videos, objects)

arg_values = st.recursive(
    st.one_of(st.integers(-5, 2000), line, st.tuples(st.integers(0, 1000), st.integers(0, 1000))),
    lambda inner: st.dictionaries(names, inner, max_size=3),
    max_leaves=6,
)
args = st.dictionaries(names, arg_values, max_size=3)


def merge_text(segs):
    """Join adjacent text segments so the list is canonical."""
    out = []
    for s in segs:
        if isinstance(s, Text) and out and isinstance(out[-1], Text):
            out[-1] = Text(out[-1].text + s.text)
        else:
            out.append(s)
    return out


plain_list = st.lists(plain, max_size=4).map(merge_text)


@st.composite
def assistant_content(draw):
    segs = draw(plain_list)
    n_steps = draw(st.integers(0, 3))
    for k in range(n_steps):
        last = k == n_steps - 1
        fn = draw(names)
        a = draw(args)
        if not last:
            segs.append(AgentStep(fn, a, tuple(draw(plain_list)), draw(line)))
            segs.append(Text("\n" + draw(st.text(ALPHABET, max_size=10))))
            continue
        shape = draw(st.sampled_from(["bare", "result", "full", "full+text"]))
        if shape == "bare":
            segs.append(AgentStep(fn, a))
        elif shape == "result":
            segs.append(AgentStep(fn, a, tuple(draw(plain_list))))
        else:
            segs.append(AgentStep(fn, a, tuple(draw(plain_list)), draw(line)))
            if shape == "full+text":
                segs.append(Text("\n" + draw(st.text(ALPHABET, max_size=10))))
    return segs


@st.composite
def messages(draw):
    role = draw(st.sampled_from(["system", "user", "assistant"]))
    segs = draw(assistant_content()) if role == "assistant" else draw(plain_list)
    return Message(role, tuple(segs))


def _valid(conv):
    try:
        validate_conversation(conv)
    except InvalidConversation:
        return False
    return True


conversations = st.lists(messages(), max_size=4).filter(_valid)
