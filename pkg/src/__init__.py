"""
LSTM-CCTC - count-supervised region proposals from serialized feature grids
"""
__version__ = "1.0.0"
