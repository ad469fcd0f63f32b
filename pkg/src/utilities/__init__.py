"""
File dumps of per-cloud features and coarsenings
"""
