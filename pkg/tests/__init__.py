"""
Unit tests for the Shape Optimization Toolkit
"""
