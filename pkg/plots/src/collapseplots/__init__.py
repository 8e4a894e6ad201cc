"""collapseplots: deterministic figure reproduction for collapselab outputs."""

from .csvio import CellHistogram, CsvFormatError, read_hist_csv, read_rates_json
from .figures import FigureSpec, render_histogram_grid, render_rate_curves

__version__ = "0.1.0"
