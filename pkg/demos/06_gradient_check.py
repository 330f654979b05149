"""
Finite-difference check of the whole training loss
==================================================

Perturbs coordinates of every parameter group of a miniature model and
compares the loss change with the tape gradient.
"""
from diffmsin.gradcheck import gradcheck

report = gradcheck(per_group=6)
for line in report.lines()[:8]:
    print(line)
print("...")
print(report.lines()[-1])
