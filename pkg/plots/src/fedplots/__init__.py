"""Figure rendering for fedcomloc experiment CSV/JSON artifacts."""

from .render import PlotJob, SchemaError, render

__all__ = ["PlotJob", "SchemaError", "render"]
