# Operator aggregation pipeline
