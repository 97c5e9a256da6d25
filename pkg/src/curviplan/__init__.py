"""Curvilinear planning toolkit (build in progress)."""
