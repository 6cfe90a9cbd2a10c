"""Exception types shared across the package."""


class DomainError(Exception):
    """An input violated a documented invariant (CLI exit code 1)."""


class ManifestError(DomainError):
    """A manifest line failed to parse or validate; message carries line context."""
