"""Transform-invariant point cloud classification"""
