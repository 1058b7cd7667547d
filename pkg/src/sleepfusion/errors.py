"""Error taxonomy shared by every module.

Each error carries a short category keyword so the CLI can emit a single
machine-parsable line: ``error: <category>: <detail>``.
"""


class SleepFusionError(Exception):
    category = "runtime"


class DimensionError(SleepFusionError):
    """Array shapes do not satisfy an operation's contract."""

    category = "dimension"


class InputError(SleepFusionError):
    """A value (label, enum member, ratio, ...) is outside its domain."""

    category = "input"


class StateError(SleepFusionError):
    """A required piece of state (gradient, checkpoint, ...) is missing."""

    category = "state"


class FormatError(SleepFusionError):
    """A serialized artifact is malformed."""

    category = "format"


class EvaluationError(SleepFusionError):
    """A numeric evaluation produced non-finite or unusable results."""

    category = "evaluation"
