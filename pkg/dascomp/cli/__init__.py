"""
CLI package for dascomp.

Run via: dascomp --help
"""
