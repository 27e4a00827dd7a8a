"""Numerical p-modulus estimates, dilatations and singularity criteria for
mappings with finite distortion."""

__version__ = "0.1.0"

from .errors import ModlabError  # noqa: E402

__all__ = ["ModlabError", "__version__"]
