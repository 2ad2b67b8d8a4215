"""
Visualization package for loss traces and analysis sweeps.
"""
