"""acvar: numerical laboratory for inner variations of the Allen-Cahn functional."""

__version__ = "1.0.0"
