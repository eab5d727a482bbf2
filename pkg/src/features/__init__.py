"""
Feature grids, scan orders and synthetic scenes
"""
