"""
Evaluation package: frozen image features, the attribute probe and the metrics.
"""
