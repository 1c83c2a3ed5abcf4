# Aggregator fitting
