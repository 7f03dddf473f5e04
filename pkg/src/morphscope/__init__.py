"""Single-image morphing-attack-detection evaluation toolkit."""

__version__ = "0.1.0"

from .errors import MorphscopeError  # noqa: F401
