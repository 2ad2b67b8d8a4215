"""
Command-line package: argument parsing and command handlers.
"""
