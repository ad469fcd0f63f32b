"""
Dataset provisioning tools
"""
