"""Exception taxonomy shared across the package.

Two broad families matter for the CLI exit-code mapping: configuration /
usage problems (exit 2) and data / runtime problems (exit 3).
"""


class CospeechError(Exception):
    """Base class for all package errors."""


class ConfigError(CospeechError):
    """Bad configuration or usage; maps to CLI exit code 2."""


class DataError(CospeechError):
    """Bad input data or runtime failure; maps to CLI exit code 3."""


# motion
class DegenerateRotation(DataError):
    pass


class ClipTooShort(DataError):
    pass


class LayoutMismatch(DataError):
    pass


# binary file formats
class BadMagic(DataError):
    pass


class VersionUnsupported(DataError):
    pass


class TruncatedFile(DataError):
    pass


# audio
class UnsupportedWav(DataError):
    pass


class BadAudioLength(DataError):
    pass


# nn substrate
class ShapeMismatch(DataError):
    pass


class BadIndex(DataError):
    pass


# diffusion
class BadRange(ConfigError):
    pass


class StepOutOfRange(DataError):
    pass


class KOutOfRange(ConfigError):
    pass


# training / metrics
class EmptyBatch(DataError):
    pass


class ZeroVector(DataError):
    pass


class BadCovariance(DataError):
    pass


class NoAudioBeats(DataError):
    pass


# synthetic corpus
class BadConfig(ConfigError):
    pass


class ManifestInvalid(DataError):
    pass
