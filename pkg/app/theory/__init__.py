# Closed forms and Monte Carlo checks
