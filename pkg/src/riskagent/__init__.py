"""Risk-sensitive PPO / CVaR-PPO trading agents with LLM news-signal infusion."""

__version__ = "0.1.0"
