"""Training, evaluation and experiment protocols"""
