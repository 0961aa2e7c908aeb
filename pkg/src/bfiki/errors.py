"""Exception types shared across the pipeline stages."""


class BfikiError(Exception):
    """Base class for all toolkit errors."""


# --- capture / frame decoding ---

class BadMagic(BfikiError):
    """File does not start with a classic pcap global header."""


class Truncated(BfikiError):
    """A pcap record extends past the end of the file."""


class MalformedReport(BfikiError):
    """A beamforming report declares more angle data than the frame carries."""


class QOutOfRange(BfikiError):
    """Quantized angle index outside [0, 2^bits)."""


# --- series handling ---

class EmptyInput(BfikiError):
    """No samples to resample."""


class SeriesTooShort(BfikiError):
    """Series shorter than the operation's minimum length."""


class LengthMismatch(BfikiError):
    """Two series (or a series and a mask) differ in length."""


class NotViable(BfikiError):
    """Series failed the gap viability check; the attack fails for this window."""


class BadRatio(BfikiError):
    """Traffic ratio outside (0, 1]."""


# --- segmentation ---

class InsufficientPeaks(BfikiError):
    """Fewer than K candidate peaks survive the spacing constraint."""


# --- neural core / models ---

class ShapeMismatch(BfikiError):
    """Tensor shapes incompatible with the requested operation."""


class LabelOutOfRange(BfikiError):
    """Class label outside [0, n_class)."""


class KeyUnderrepresented(BfikiError):
    """Some key has fewer than two labeled segments; pairing impossible."""


class EmptySegment(BfikiError):
    """Zero-length segment fed to the inference model."""


class BadDistribution(BfikiError):
    """Key probability distribution does not sum to 1 (or has negative mass)."""


class UnknownKey(BfikiError):
    """Password contains a key absent from the keyboard layout."""


class CheckpointVersionMismatch(BfikiError):
    """Checkpoint was written by an incompatible format version."""


class ConfigInvalid(BfikiError):
    """Pipeline configuration failed validation."""


class BadInput(BfikiError):
    """Plot input file is empty or not produced by the expected stage."""
