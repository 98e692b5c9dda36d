"""Class-spanned supervised projection, multipartite instance ranking and
Otsu selection, applied to filter-bank texture recognition."""

__version__ = "0.1.0"
