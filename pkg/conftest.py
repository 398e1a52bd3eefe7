"""测试共享工具：SnV-参数常量，以及脚本方式直接运行测试类时用的简易执行器"""

import inspect
import os
import sys
import tempfile
import traceback
from datetime import datetime
from pathlib import Path

# 确保能够导入主模块
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from modules.geometry import DefectOrientation
from modules.spin_hamiltonian import PhysicalConstants

CONSTANTS = PhysicalConstants()
ORIENTATION = DefectOrientation.AXIS_111


def run_test_class(cls, title):
    """逐个执行 test_* 方法并打印 ✅/❌ 摘要；需要 tmp_path 的方法分配临时目录"""
    print("==================================")
    print(title)
    print("==================================")
    print(f"测试时间: {datetime.now()}")

    tester = cls()
    results = {}
    for name, method in inspect.getmembers(tester, inspect.ismethod):
        if not name.startswith("test_"):
            continue
        kwargs = {}
        if "tmp_path" in inspect.signature(method).parameters:
            kwargs["tmp_path"] = Path(tempfile.mkdtemp(prefix="groupiv_"))
        try:
            method(**kwargs)
            results[name] = True
        except Exception:
            print(f"\n{name} 出错:")
            traceback.print_exc()
            results[name] = False

    print("\n==================================")
    print("测试结果摘要")
    print("==================================")
    for name, passed in results.items():
        print(f"{name}: {'✅ 通过' if passed else '❌ 失败'}")

    all_passed = all(results.values())
    print("\n🎉 所有测试通过!" if all_passed else "\n⚠️ 部分测试失败。")
    return all_passed
