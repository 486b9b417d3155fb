"""Abductive reasoning engine: reads a controlled English fragment,
infers a latent higher-order-logic theory with natural-deduction proofs
by Metropolis-Hastings, and answers true/false/unknown and wh queries."""

__version__ = "0.1.0"
