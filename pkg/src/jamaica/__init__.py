"""Annotation service for smart-city sensor streams.

Observations arrive through an NGSI-lite context protocol, are scored by
per-job online detectors/classifiers, and the outcomes are stored as tagged
spatiotemporal annotations in an embedded tag graph.
"""

__version__ = "0.1.0"
