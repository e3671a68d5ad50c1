import numpy as np
import pytest

from errors import InvalidHorizon, ValidationError
from paths import (
    ProjectedPath,
    Trajectory,
    dump_projected,
    dump_trajectory,
    occupation_time,
)


def test_events_at_or_after_horizon_are_dropped():
    traj = Trajectory.from_events(1, [(0.5, 2), (2.0, 1)], 2.0)
    assert traj.n_jumps == 1
    assert traj.state_at(1.9) == 2


def test_half_open_convention():
    traj = Trajectory.from_events(1, [(1.0, 2)], 3.0)
    assert traj.state_at(0.999) == 1
    assert traj.state_at(1.0) == 2


def test_trajectory_validation():
    with pytest.raises(InvalidHorizon):
        Trajectory.from_events(1, [], 0.0)
    with pytest.raises(ValidationError):
        Trajectory.from_events(1, [(1.0, 2), (1.0, 1)], 3.0)
    with pytest.raises(ValidationError):
        Trajectory.from_events(1, [(1.0, 1)], 3.0)


def test_occupation_splits_the_horizon():
    traj = Trajectory.from_events("a", [(1.0, "d"), (1.5, "b")], 2.0)
    inside = occupation_time(traj, ["a", "b"])
    outside = occupation_time(traj, ["d"])
    assert inside == pytest.approx(1.5)
    assert inside + outside == pytest.approx(traj.horizon)


def test_projected_path_bookkeeping():
    path = ProjectedPath("X", 1, [1.0, 3.0], [2, 1], 4.0)
    np.testing.assert_allclose(path.sojourns(), [1.0, 2.0])
    assert path.count(1.0) == 1
    assert path.value_at(2.0) == 2
    assert path.transitions() == [(1, 2, 1.0), (2, 1, 2.0)]
    assert path.time_in() == {1: 2.0, 2: 2.0}


def test_projected_path_needs_increasing_times():
    with pytest.raises(ValidationError):
        ProjectedPath("X", 1, [2.0, 1.0], [2, 1], 4.0)


def test_csv_dumps(tmp_path):
    traj = Trajectory.from_events((2, 0), [(0.25, (1, 1))], 1.0)
    filename = tmp_path / "traj.csv"
    dump_trajectory(traj, str(filename))
    assert filename.read_text().splitlines() == ["t,state", '0,"2 0"', '0.25,"1 1"']

    path = ProjectedPath("X_hat", 1, [0.5], [2], 1.0)
    filename = tmp_path / "proj.csv"
    dump_projected([path], str(filename))
    assert filename.read_text().splitlines() == ["t,label,kind", "0,1,X_hat", "0.5,2,X_hat"]
