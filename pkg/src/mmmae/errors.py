"""Exception types shared across the package."""


class ConfigurationError(Exception):
    """A config value or combination of values is invalid."""


class EmptyCloudError(Exception):
    """A depth map produced no valid 3D points."""


class FormatError(Exception):
    """A serialized file (dataset shard, checkpoint) is corrupt or has the wrong version."""


class TrainingAborted(Exception):
    """Training stopped because of a non-finite loss or gradient."""
