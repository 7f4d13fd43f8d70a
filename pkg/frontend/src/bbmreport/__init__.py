"""Static diagnostic reports for the simulation harness's output files."""

__version__ = "0.1.0"

from .inputs import (ReportError, ReportInputError,  # noqa: F401
                     ReportSpecError)
from .report import PLOT_NAMES, ReportSpec, render_report  # noqa: F401
