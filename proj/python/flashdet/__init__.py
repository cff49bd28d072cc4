"""Tumor-region detection: a small patch CNN with dense and feature-space
sliding-window inference engines."""

from flashdet._core import *  # noqa: F401,F403
from flashdet._core import __version__  # noqa: F401
