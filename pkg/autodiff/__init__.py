"""
Autodiff package: dense tensors, a recording graph, the differentiable kernels,
gradient checking and the adaptive-moment optimizer.
"""
