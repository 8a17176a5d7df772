"""
Choosing the quantization level
===============================

A coarse c_l adds rounding noise to every update.  A fine c_l makes the
quantized integers large; once a weighted buffer sum no longer fits in half
the field it wraps around and the decoded update is garbage.  A deliberately
small field (q = 2^24 - 3) with the wrap-around guard switched off shows both
ends.
"""

from basecagg import sim
from basecagg.quantize import wraparound_limit

cfg = sim.SimConfig(dim=100, separation=2.0, eta_l=0.003, q=16777213, guard=False, rounds=150)
data = sim.load_dataset(cfg)
print("largest safe |c_l * delta| per coordinate:", wraparound_limit(cfg.q, cfg.K, cfg.c_g))

for bits in (4, 8, 16, 22, 24, 26):
    m = sim.run(cfg.replace(c_l=2**bits), "basecagg", data)
    warnings = sum(r.overflow_warnings for r in m.rows)
    print(f"c_l = 2^{bits:<2}  final accuracy {m.final_accuracy:.4f}   overflow warnings {warnings}")
