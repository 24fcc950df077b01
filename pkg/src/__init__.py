from . import cli, config

__all__ = [
    "cli",
    "config"
]
