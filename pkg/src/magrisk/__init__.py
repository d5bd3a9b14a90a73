"""Multi-agent failure-mode simulation and risk metrics."""
