"""
LSTM stacks, count-based CTC and checkpoints
"""
