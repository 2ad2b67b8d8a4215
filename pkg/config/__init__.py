"""
Configuration package for the space-time concept mapper.
Contains constants, presets, the run-config schema and the error types.
"""
