# Experiment drivers
