"""Regenerate src/rng/sobol_table.rs.

Reads the Joe & Kuo "new-joe-kuo-6.21201" direction numbers as shipped with
SciPy and writes the first MAX_DIM dimensions as Rust constants.

    python3 tools/gen_sobol_table.py > src/rng/sobol_table.rs
"""
import os

import numpy as np
import scipy.stats

MAX_DIM = 1111

path = os.path.join(os.path.dirname(scipy.stats.__file__), "_sobol_direction_numbers.npz")
data = np.load(path)
poly = data["poly"][:MAX_DIM]
vinit = data["vinit"][:MAX_DIM]
max_deg = max(int(p).bit_length() - 1 for p in poly)

print("// Generated by tools/gen_sobol_table.py from the Joe & Kuo new-joe-kuo-6.21201")
print("// direction numbers. Do not edit by hand.")
print()
print(f"pub(crate) const MAX_DIM: usize = {MAX_DIM};")
print(f"pub(crate) const MAX_DEGREE: usize = {max_deg};")
print()
print("/// Primitive polynomial of each dimension, leading and constant terms included.")
print("#[rustfmt::skip]")
print("pub(crate) static POLY: [u16; MAX_DIM] = [")
for i in range(0, MAX_DIM, 16):
    print("    " + ", ".join(str(int(p)) for p in poly[i:i + 16]) + ",")
print("];")
print()
print("/// Initial direction integers m_1..m_s of each dimension, zero padded.")
print("#[rustfmt::skip]")
print("pub(crate) static M_INIT: [[u16; MAX_DEGREE]; MAX_DIM] = [")
for p, row in zip(poly, vinit):
    s = max(int(p).bit_length() - 1, 1)
    vals = [int(v) for v in row[:max_deg]]
    vals = vals[:s] + [0] * (max_deg - s)
    print("    [" + ", ".join(str(v) for v in vals) + "],")
print("];")
