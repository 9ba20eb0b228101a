"""Super-resolution with a gradient-sensitive loss and a progressive dual reconstruction network."""
__version__ = "0.1.0"
