"""Provably safe RL for finite stochastic reach-avoid MDPs."""
