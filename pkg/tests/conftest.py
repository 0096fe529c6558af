import pytest

from safesynth.geometry import Box, RegionUnion, SampleSpace
from safesynth.pipeline import room_casestudy_config, validate_config
from safesynth.polynomial import Polynomial, build_basis

# Reference values of the room-temperature case study this tool reproduces.
ROOM_STUDY = {
    "barrier": Polynomial(
        build_basis(1, 4), (0.0, 1.948e-3, 0.2395, -3.841e-2, 9.740e-4)
    ),
    "controller": Polynomial(
        build_basis(1, 4), (1.208e-5, 9.768e-2, -3.438e-3, 2.418e-5, 4.594e-7)
    ),
    "unsafe_floor": -68.14,
    "initial_cap": -69.64,
    "growth_budget": 0.2998,
    "kappa": 0.9999723,
    "lipschitz": 11.63,
    "beta": 0.05,
    "prior_eps": 7.492e-6,
    "prior_n": 2733296,
}


@pytest.fixture(scope="session")
def room_space() -> SampleSpace:
    return SampleSpace.product(
        Box.from_intervals([[22.5, 26.5]]), Box.from_intervals([[0.0, 1.0]])
    )


@pytest.fixture(scope="session")
def room_regions():
    return {
        "state": Box.from_intervals([[22.5, 26.5]]),
        "input": Box.from_intervals([[0.0, 1.0]]),
        "initial": RegionUnion.from_intervals([[[24.0, 25.0]]]),
        "unsafe": RegionUnion.from_intervals([[[22.5, 23.0]], [[26.0, 26.5]]]),
    }


def small_room_config(**overrides):
    """A fast room configuration for unit tests (seconds, not minutes)."""
    raw = room_casestudy_config(n_scenario=1500, n_validation=700,
                                seed_scenario=11, seed_validation=12)
    raw["grid_points"] = {"initial": 401, "unsafe": 201, "state": 1601}
    raw.update(overrides)
    return validate_config(raw)


@pytest.fixture(scope="session")
def small_config():
    return small_room_config()


@pytest.fixture(scope="session")
def small_solved(small_config):
    """One solved small problem shared by solution-inspection tests."""
    from safesynth.plant import Role, collect, make_plant
    from safesynth.scp import box_to_polytope, build_problem, solve_lp

    plant = make_plant(small_config.plant_spec)
    dataset = collect(plant, small_config.space(), 1500, 11, Role.SCENARIO)
    input_a, input_b = box_to_polytope(small_config.input_box)
    problem = build_problem(
        small_config.layout(), dataset,
        small_config.initial_region, small_config.unsafe_region,
        small_config.state_box, input_a, input_b,
        small_config.horizon, small_config.grids,
        small_config.strict_margin, small_config.tighten,
    )
    solution = solve_lp(problem, small_config.tolerances)
    return small_config, dataset, problem, solution
