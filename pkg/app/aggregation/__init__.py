# Aggregation weights and model banks
