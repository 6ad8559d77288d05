"""Exclusion with mean-field reservoirs, sticky random walks and the free-boundary heat equation."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"
