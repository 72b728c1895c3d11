"""Monte Carlo and dynamic-programming tools for tug-of-war games with noise."""

from .noise import (
    GameConstants,
    NoiseMeasure,
    NoiseMeasureError,
    derive_constants,
    make_noise_measure,
    measure_for_p,
    point_mass,
    two_point,
    uniform_sphere_orthogonal,
)
from .geometry import Annulus, Ball, Box, ConeComplement, Intersection, Polygon, PuncturedBall
from .engine import GameConfig, Outcome, play, play_shrinking

__all__ = [
    "Annulus", "Ball", "Box", "ConeComplement", "GameConfig", "GameConstants", "Intersection",
    "NoiseMeasure", "NoiseMeasureError", "Outcome", "Polygon", "PuncturedBall", "derive_constants",
    "make_noise_measure", "measure_for_p", "play", "play_shrinking", "point_mass", "two_point",
    "uniform_sphere_orthogonal",
]
