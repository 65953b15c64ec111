import numpy as np
import pytest

from dlnn.experiments import (
    EXPERIMENTS,
    MECHANICS_TEST_LEVELS,
    MECHANICS_TRAIN_LEVELS,
    build_dataset,
    default_architecture,
    default_train_config,
    mechanics_ic_grid,
    single_dof_system,
    table1_system,
)


def test_table1_system_values():
    sys = table1_system()
    np.testing.assert_array_equal(sys.m, np.eye(2))
    assert sys.k[0, 0] == 1.0 and sys.k[1, 1] == 1.0 and sys.k[0, 1] == -0.4
    assert sys.c[0, 0] == 0.1 and sys.c[0, 1] == 0.1 and sys.c[1, 1] == 0.2


def test_single_dof_system_is_unit():
    sys = single_dof_system()
    assert sys.m[0, 0] == sys.c[0, 0] == sys.k[0, 0] == 1.0


def test_default_architectures():
    assert default_architecture("two_pixel") == (200, 200)
    assert default_architecture("microstructure") == (600,)
    assert default_architecture("reverse_shapes") == (600,)


def test_default_train_configs_follow_reported_batch_sizes():
    assert default_train_config("two_pixel").batch_size == 750
    assert default_train_config("microstructure").batch_size == 100
    assert default_train_config("mechanics").batch_size == 1000
    assert default_train_config("lehmer").target_loss == 1e-5


def test_build_dataset_splits():
    train = build_dataset("lehmer", n_samples_per_traj=3)
    test = build_dataset("lehmer", split="test", n_samples_per_traj=3)
    np.testing.assert_allclose(test.states[0], 0.5 * train.states[0], atol=1e-12)


def test_build_two_pixel_test_split_runs_to_six_seconds():
    test = build_dataset("two_pixel", split="test", n_samples_per_traj=4)
    assert test.times.max() == pytest.approx(6.0)
    assert test.provenance["n_trajectories"] == 16


def test_build_microstructure_test_split_scales_ic():
    train = build_dataset("microstructure", n_steps=3)
    test = build_dataset("microstructure", split="test", n_steps=3)
    np.testing.assert_allclose(test.states[0], 0.9 * train.states[0], atol=1e-15)


def test_mechanics_ic_grids():
    assert len(mechanics_ic_grid(MECHANICS_TRAIN_LEVELS, 2)) == 16
    assert len(mechanics_ic_grid(MECHANICS_TEST_LEVELS, 2)) == 625
    assert len(mechanics_ic_grid(MECHANICS_TRAIN_LEVELS, 1)) == 4
    assert len(mechanics_ic_grid(MECHANICS_TEST_LEVELS, 1)) == 25


def test_unknown_experiment_rejected():
    with pytest.raises(ValueError, match="unknown"):
        build_dataset("warp_drive")
    with pytest.raises(ValueError, match="unknown"):
        default_train_config("warp_drive")


def test_experiment_list():
    assert set(EXPERIMENTS) == {"mechanics", "two_pixel", "lehmer",
                                "microstructure", "reverse_shapes"}
