"""Cat-state transfer between cavities coupled to a common environment."""

from ._cradle import *  # noqa: F401,F403
from ._cradle import __version__, run_point

__all__ = [name for name in dir() if not name.startswith("_")]


def run_preset(name, out_dir, **overrides):
    """Run a single point of a preset, with `section.key` overrides given as keyword
    arguments (dots written as double underscores, e.g. numerics__dt=0.05)."""
    keys = {k: v for k, v in preset(name).items() if not k.startswith("sweep.")}  # noqa: F405
    for k, v in overrides.items():
        keys[k.replace("__", ".")] = str(v)
    return run_point(keys, str(out_dir))
