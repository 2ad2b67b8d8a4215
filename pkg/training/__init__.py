"""
Training package: generator pretraining and concept inversion.
"""
