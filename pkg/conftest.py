import os
import sys

# make `src.` imports resolve the same way they do for main.py
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
