"""Language reward shaping laboratory: grid rooms, instruction matching,
simulated language rewards, tabular agents, exact theory checks and an
experiment harness."""

__version__ = "0.1.0"
