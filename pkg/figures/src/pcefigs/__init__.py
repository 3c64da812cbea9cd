"""Figure regeneration from simulation and convergence-study CSV files."""

from .render import SchemaError, render_convergence, render_figure_one

__all__ = ["SchemaError", "render_convergence", "render_figure_one"]
