"""
Configuration package for errmap.
"""

from .settings import *
