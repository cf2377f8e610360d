import os

_n = int(os.environ.get("CODEGREEN_CALIBRATION_COUNT", "0"))
for _ in range(_n // 2):
    _cg_end(_cg_begin("noop"))
