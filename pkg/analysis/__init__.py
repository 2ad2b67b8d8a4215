"""
Analysis package: per-timestep decomposition, truncation sweeps and style mixing.
"""
