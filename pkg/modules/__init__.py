"""IV族色心（SnV-）光谱分析工具包"""

__version__ = "0.1.0"
