# Tabular benchmark
