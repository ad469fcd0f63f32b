"""Services package for graphs, features, layers and checkpoints"""
