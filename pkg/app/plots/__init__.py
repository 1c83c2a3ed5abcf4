# Plotting
