"""Toy-scale restoration pipeline: data, networks, training and inference."""
