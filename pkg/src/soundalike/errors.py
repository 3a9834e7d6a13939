"""Exception types raised across the engine.

Every error the public API can raise is a subclass of SoundalikeError so
callers (CLI, service) can catch one base type and map it to an exit code
or HTTP status.
"""


class SoundalikeError(Exception):
    """Base class for all engine errors."""


# -- signal / DSP ------------------------------------------------------------

class EmptySignal(SoundalikeError):
    pass


class UnsupportedRate(SoundalikeError):
    pass


class SignalTooShort(SoundalikeError):
    pass


class InvalidRange(SoundalikeError):
    pass


class ShapeMismatch(SoundalikeError):
    pass


class NotEnoughData(SoundalikeError):
    pass


class WavFormatError(SoundalikeError):
    """Unreadable or unsupported WAV file."""


# -- augmentation ------------------------------------------------------------

class InvalidShift(SoundalikeError):
    pass


class InvalidFactor(SoundalikeError):
    pass


class InvalidDecay(SoundalikeError):
    pass


class InvalidConfig(SoundalikeError):
    pass


# -- model / training --------------------------------------------------------

class CacheMismatch(SoundalikeError):
    pass


class ModelLoadError(SoundalikeError):
    pass


class DivergenceError(SoundalikeError):
    """Training loss became non-finite."""


class InvalidEmbedding(SoundalikeError):
    pass


# -- pipeline ----------------------------------------------------------------

class InvalidId(SoundalikeError):
    pass


class TrackTooShort(SoundalikeError):
    pass


class EmptySplit(SoundalikeError):
    pass


# -- evaluation --------------------------------------------------------------

class UndefinedAP(SoundalikeError):
    """Average precision is undefined: the ranking contains no positives."""


class UnknownAnnotation(SoundalikeError):
    pass


class ModelNotFitted(SoundalikeError):
    pass


# -- index / search ----------------------------------------------------------

class EmptyIndex(SoundalikeError):
    pass


class DuplicateRecord(SoundalikeError):
    pass


class IndexLoadError(SoundalikeError):
    pass


class FingerprintMismatch(SoundalikeError):
    """Index was built by a different model file than the one provided."""


class QueryTooShort(SoundalikeError):
    pass
