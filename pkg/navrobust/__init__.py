"""
navrobust: стенд оценки планировщиков и устойчивости к смене внешнего вида сцены
"""
__version__ = "0.1.0"
