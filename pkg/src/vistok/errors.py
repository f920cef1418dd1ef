"""Exception hierarchy shared by every vistok module."""


class VistokError(Exception):
    """Base class for all errors raised by this package."""


# resize planning
class AspectRatioTooExtreme(VistokError, ValueError):
    pass


class InfeasibleBounds(VistokError, ValueError):
    pass


class MisalignedDimensions(VistokError, ValueError):
    pass


# patchifying
class DimensionMismatch(VistokError, ValueError):
    pass


class NonUniformFrames(VistokError, ValueError):
    pass


class UnsupportedImageFormat(VistokError, ValueError):
    pass


# rotary / attention
class LengthMismatch(VistokError, ValueError):
    pass


class ShapeMismatch(VistokError, ValueError):
    pass


# packing
class ItemExceedsBudget(VistokError, ValueError):
    def __init__(self, item_id, length, budget):
        self.item_id = item_id
        self.length = length
        self.budget = budget
        super().__init__(f"item {item_id!r} has length {length} > budget {budget}")


# text formats
class FormatError(VistokError, ValueError):
    """A parse failure located at a character offset of the input."""

    def __init__(self, message, offset):
        self.message = message
        self.offset = offset
        super().__init__(f"{message} (at offset {offset})")


class UnterminatedMessage(FormatError):
    pass


class UnknownRole(FormatError):
    pass


class MismatchedVisionDelimiters(FormatError):
    pass


class UnexpectedText(FormatError):
    pass


class MalformedBox(FormatError):
    pass


class MissingKeyword(FormatError):
    pass


class ArgsNotParseable(FormatError):
    pass


class InvalidConversation(VistokError, ValueError):
    pass


class OutOfBounds(VistokError, ValueError):
    pass


class DegenerateBox(VistokError, ValueError):
    pass


# agent loop
class StepLimitExceeded(VistokError, RuntimeError):
    pass


class UnknownAction(VistokError, ValueError):
    def __init__(self, name, step):
        self.name = name
        self.step = step
        super().__init__(f"unknown action {name!r} at step {step}")
