"""Batch converter from interest-point extractor text dumps to the
line-delimited feature interchange format.

Extractor dumps are whitespace-separated numeric columns, one detected point
per line; the column layout varies between tools, so it is configured by a
small JSON mapping file rather than hard-coded.
"""

from .convert import AdapterError, ColumnMap, FormatError, VideoMeta, convert

__all__ = ["AdapterError", "ColumnMap", "FormatError", "VideoMeta", "convert"]

__version__ = "0.1.0"
