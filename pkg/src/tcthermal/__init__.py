"""Ocean thermal response to tropical cyclones from paired profile data."""
__version__ = "0.1.0"
