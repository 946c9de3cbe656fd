"""Monte Carlo benchmark harness: baselines, scoring, configuration and sweeps."""
