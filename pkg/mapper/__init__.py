"""
Mapper package: positional encoding of (timestep, layer) queries and the
neural mapper that turns them into concept token embeddings.
"""
