# Kernels and kernel ridge regression
