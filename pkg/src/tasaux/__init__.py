"""Auxiliary boundary and segment-shape losses for temporal action segmentation."""

__version__ = "0.1.0"
