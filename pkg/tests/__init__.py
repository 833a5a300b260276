"""
Tests for cenrecal
"""
