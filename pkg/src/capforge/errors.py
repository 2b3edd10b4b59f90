"""Exception hierarchy shared across the pipeline."""

from __future__ import annotations


class CapforgeError(Exception):
    """Base class for every error raised by capforge."""


# dataset files


class DatasetError(CapforgeError):
    pass


class MalformedLine(DatasetError):
    def __init__(self, line_no: int, detail: str = ""):
        self.line_no = line_no
        super().__init__(f"line {line_no}: malformed record" + (f" ({detail})" if detail else ""))


class MissingField(DatasetError):
    def __init__(self, line_no: int, field: str):
        self.line_no = line_no
        self.field = field
        super().__init__(f"line {line_no}: missing field {field!r}")


class InconsistentPool(DatasetError):
    def __init__(self, entry_id: str, detail: str = ""):
        self.entry_id = entry_id
        super().__init__(f"entry {entry_id!r}: generated captions disagree with pool" + (f" ({detail})" if detail else ""))


class IoFailure(DatasetError):
    pass


# shearing


class EmptyCorpus(CapforgeError):
    pass


class NoValidClause(CapforgeError):
    kind = "NoValidClause"


# orchestration


class EmptyInput(CapforgeError):
    pass


class MissingShard(CapforgeError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"shard {index} output is missing or incomplete")


class ImageUnreadable(CapforgeError):
    kind = "ImageUnreadable"

    def __init__(self, line_no: int, ref: str, detail: str = ""):
        self.line_no = line_no
        self.ref = ref
        super().__init__(f"line {line_no}: cannot read image {ref!r}" + (f": {detail}" if detail else ""))


class CheckpointMismatch(CapforgeError):
    pass


class Interrupted(CapforgeError):
    """Processing stopped on request; checkpoints are up to date."""


# embeddings / stats


class ProviderUnavailable(CapforgeError):
    pass


class DimensionMismatch(CapforgeError):
    pass


# toy trainer


class NonFiniteInput(CapforgeError):
    pass


class DivergenceDetected(CapforgeError):
    pass


class EmptyEvalSet(CapforgeError):
    pass


class ConfigError(CapforgeError):
    """Invalid run configuration (the CLI maps this to exit code 2)."""
