"""Multi-view white-matter fiber clustering (geometry + endpoint BOLD + FA)."""

from ._dmvfc import *  # noqa: F401,F403
from ._dmvfc import __version__  # noqa: F401
