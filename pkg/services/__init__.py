"""
Services package: pipeline stages, numerics and shared infrastructure.
"""
