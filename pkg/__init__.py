"""
Joint random access and data transmission QoS toolkit for mMTC
"""

__version__ = "1.0.0"
__author__ = "mMTC QoS Team"
