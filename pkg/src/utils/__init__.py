"""
Utility modules for LSTM-CCTC
"""
