"""Smoke test for the bae_qnd extension module."""

import math

import bae_qnd


def close(a, b, tol):
    assert abs(a - b) <= tol, f"{a} vs {b}"


def main():
    model = bae_qnd.MeasurementModel(2.0, 24)
    assert model.dim == 24
    close(model.vacuum_outcome_variance(), 4.0 + 0.25, 1e-9)
    close(model.outcome_density(0.0), 1.0 / math.sqrt(2 * math.pi * 4.25), 1e-9)
    joint = model.joint_photon_densities(1.0)
    close(sum(joint), model.outcome_density(1.0), 1e-12)
    probs = model.conditional_probabilities(1.0)
    close(sum(probs), 1.0, 1e-12)
    assert model.completeness_defect() < 1e-8

    p = bae_qnd.jump_probability(4.0)
    close(p / (1.0 / (16 * 16.0)), 1.0, 0.02)
    close(bae_qnd.operator_correlation(3), 0.125, 1e-12)

    exact = bae_qnd.exact_values(1.0, dim=24)
    assert exact["reference_n"] == 0

    run = bae_qnd.simulate(1.0, 20000, 11, dim=24)
    assert len(run["x_m"]) == 20000
    value, err = run["jump_fraction"]
    assert abs(value - exact["jump_probability"]) < 4 * err

    params = bae_qnd.SetupParams(math.sqrt(2.0), dim=24)
    close(params.reflectivity, 2.0 / 3.0, 1e-12)
    close(params.delta_x, math.sqrt(0.5), 1e-12)
    report = params.equivalence(0)
    assert report["defect"] < 1e-3, report

    try:
        bae_qnd.MeasurementModel(-1.0, 16)
    except ValueError:
        pass
    else:
        raise AssertionError("negative resolution accepted")
    try:
        bae_qnd.SetupParams(3.0, dim=24).equivalence(0)
    except OverflowError:
        pass
    else:
        raise AssertionError("overflow not reported")

    print("smoke test passed")


if __name__ == "__main__":
    main()
