"""Learning-rate schedules, checkpoint averaging and curriculum orderings, with a
toy trainer and a two-dimensional SGD model for studying how they interact."""

__version__ = "0.1.0"
