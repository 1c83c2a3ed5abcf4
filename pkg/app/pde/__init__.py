# PDE solvers and samplers
