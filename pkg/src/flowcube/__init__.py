"""flowcube: movement traces -> multi-resolution OD flow cubes -> query service."""

__version__ = "0.1.0"
