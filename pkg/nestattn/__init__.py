"""
nestattn - Nested-attention subject personalization on a toy diffusion model
"""

from .core.config import get_settings

# Convenience exports
settings = get_settings()

__version__ = "0.1.0"
__author__ = "nestattn developers"
