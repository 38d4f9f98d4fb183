"""Near-duplicate leakage audit toolkit for CIFAR-style image benchmarks."""

__version__ = "0.1.0"
