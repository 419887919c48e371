"""Toolkit for auditing what static PE malware classifiers actually learn.

Builds composition-controlled corpora of synthetic PE files, trains a
reference black-box classifier, distills it into surrogate decision trees,
and traces every top-ranked feature back to the bytes that produced it.
"""

__version__ = "0.1.0"
