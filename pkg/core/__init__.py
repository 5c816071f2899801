"""
Easy-versus-hard routing between a fast and a slow face detector: datasets,
detector backends, splitting criteria, routing, metrics and sweeps.
"""
