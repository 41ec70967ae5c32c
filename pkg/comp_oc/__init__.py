"""
Neural-network approximation of optimal controls for compositional optimal control problems.
"""
__version__ = "0.1.0"
