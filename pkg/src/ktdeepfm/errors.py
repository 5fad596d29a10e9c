"""Exception hierarchy.

Every error carries the name of the module that raised it so the command
line front end can report where a failure originated.
"""


class KtError(Exception):
    module = "ktdeepfm"

    def __init__(self, *args, module=None):
        super().__init__(*args)
        if module is not None:
            self.module = module


# slam_ingest
class IngestError(KtError):
    module = "slam_ingest"


class MalformedLine(IngestError):
    def __init__(self, lineno, line, reason=""):
        self.lineno = lineno
        self.line = line
        msg = f"line {lineno}: {line!r}"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)


class DuplicateKey(IngestError):
    pass


class MissingLabel(IngestError):
    pass


class EmptyDataset(KtError):
    module = "slam_ingest"


# encoder
class EncoderError(KtError):
    module = "encoder"


class UnlabeledToken(EncoderError):
    pass


class SchemaMismatch(EncoderError):
    pass


# model_core
class ModelError(KtError):
    module = "model_core"


class IndexOutOfRange(ModelError):
    pass


class DimensionMismatch(ModelError):
    pass


class NonFiniteGradient(ModelError):
    pass


# trainer
class TrainerError(KtError):
    module = "trainer"


class NonFiniteLoss(TrainerError):
    pass


class EmptyTrainingSet(TrainerError):
    pass


class ShapeMismatch(TrainerError):
    pass


# metrics
class SingleClass(KtError):
    module = "metrics"


# synth_oracle
class DegenerateVariance(KtError):
    module = "synth_oracle"
