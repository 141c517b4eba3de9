"""Advection kernels and mask compositing."""
