"""Exception types shared across the package.

Every error carries an ``exit_code`` so the CLI can map failures onto its
documented process exit codes (2 for validation problems, 3 for I/O).
"""


class PruneError(Exception):
    exit_code = 2


class ValidationError(PruneError):
    """Input violates a documented precondition."""


class ManifestError(ValidationError):
    """The snapshot manifest is missing keys or is internally inconsistent."""


class BlobSizeError(ValidationError):
    """The blob holds fewer (or more) bytes than the manifest declares."""


class NonFiniteError(ValidationError):
    """A tensor contains NaN or Inf."""


class ConstraintError(ValidationError):
    """A mask would break an architectural pruning constraint."""


class SnapshotIOError(PruneError):
    exit_code = 3
