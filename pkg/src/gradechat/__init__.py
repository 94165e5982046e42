"""gradechat: difficulty-controlled conversation for language learners."""

__version__ = "0.1.0"

from .levels import LEVELS, UNBINNED, Level

__all__ = ["LEVELS", "UNBINNED", "Level", "__version__"]
