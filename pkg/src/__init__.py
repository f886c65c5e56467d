# This file makes src a Python package
__version__ = "0.1.0"
