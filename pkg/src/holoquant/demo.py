"""Files for the demo model shipped inside the package."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

__all__ = ["demo_config", "demo_model"]


def _data(name: str) -> Path:
    return Path(str(resources.files("holoquant") / "data" / name))


def demo_config() -> Path:
    """INI config that trained the demo model (task, model and train sections)."""
    return _data("demo.ini")


def demo_model() -> Path:
    """Dense float32 SKAN file trained from :func:`demo_config`."""
    return _data("demo.skan")
