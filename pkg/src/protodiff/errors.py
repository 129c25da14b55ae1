"""Exception types shared across the package."""


class ProtodiffError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(ProtodiffError):
    """An operation was called with invalid parameters."""


class StepRangeError(ProtodiffError):
    """A diffusion step index is outside the valid range for its direction."""


class ContractError(ProtodiffError):
    """Inputs violate a shape/value contract (e.g. mismatched array shapes)."""


class CapabilityError(ProtodiffError):
    """A backend was asked for something it does not support."""


class RegionError(ProtodiffError):
    """A metric region is empty or too small for the requested computation."""


class LabelParseError(ProtodiffError):
    """A label file line could not be parsed."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class VocabularyError(ProtodiffError):
    """A class or scenario word is not in the configured vocabulary."""


class ConfigurationError(ProtodiffError):
    """A run configuration is inconsistent or references missing resources."""


class TrainingError(ProtodiffError):
    """Training diverged or could not complete."""


class IncompleteStoreError(ProtodiffError):
    """A prototype store is missing entries required by the requested run."""


class ContainerFormatError(ProtodiffError):
    """A serialized container file is malformed or has an unsupported version."""
