"""Batch figure generation from vsl diagnostics and fits CSVs.

Figures never recompute physics; they visualize schema-v1 CSV columns.
"""

from .spec import FigureSpec, parse_spec

__version__ = "0.1.0"
