"""Reasoning about edge-AI degradation over multi-access (WiFi/5G/LiFi) links."""

__version__ = "0.1.0"
