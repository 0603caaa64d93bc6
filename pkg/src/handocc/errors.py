"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


class DatasetError(Exception):
    """Base class for dataset storage problems."""


class ManifestError(DatasetError):
    """The manifest file is structurally invalid."""


class ManifestVersionError(ManifestError):
    """The manifest schema version is not supported."""


class MissingFileError(DatasetError):
    """A file referenced by the manifest does not exist."""


class CorruptRasterError(DatasetError):
    """A raster file exists but cannot be decoded or has the wrong shape."""
