"""
Cenrecal - перекалибровка признаков по центроидам классов.
"""

__version__ = "0.1.0"
