import functools
import json
from typing import Callable

import numpy as np

from hullfacets.geometry.distributions import RadialModel, beta_type, gaussian, student_t, uniform_ball
from hullfacets.geometry.quadrature import QuadratureConfig

CFG = QuadratureConfig()


def builtin_cases() -> list[RadialModel]:
    return [
        gaussian(2),
        gaussian(5),
        student_t(3.0, 2),
        student_t(1.0, 4),
        uniform_ball(2),
        uniform_ball(5),
        beta_type(2.0, 3),
        beta_type(-0.5, 2),
    ]


def builtin_factories() -> list[Callable[[int], RadialModel]]:
    return [
        gaussian,
        functools.partial(student_t, 3.0),
        uniform_ball,
        functools.partial(beta_type, 2.0),
    ]


def support_grid(model: RadialModel, points: int, start: float = 0.0) -> np.ndarray:
    upper = model.support_upper if np.isfinite(model.support_upper) else 4.0 * model.scale
    return np.linspace(start * upper, upper, points, endpoint=not np.isfinite(model.support_upper))


def regular_polygon(sides: int, radius: float = 1.0) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(sides) / sides
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def gen_model_file(data: dict, path: str):
    with open(path, mode="w") as model_file:
        json.dump(data, model_file)
