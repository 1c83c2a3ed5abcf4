# MEVA aggregation library
