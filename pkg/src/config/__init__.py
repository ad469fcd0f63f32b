"""Configuration package for the point cloud pipeline"""
