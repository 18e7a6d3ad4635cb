"""Environment physics, reset semantics, and normalizer tests."""

import numpy as np
import pytest

from pathrl.envs import (
    ENV_REGISTRY,
    BatchState,
    PendulumSwingUp,
    PointMassReacher,
    denormalize,
    make_env,
    normalize,
    normalizer_init,
    normalizer_update,
    pendulum_energy,
    wrap_angle,
)
from pathrl.errors import ConfigurationError, SimulationError


def test_registry_and_make_env():
    assert set(ENV_REGISTRY) == {"pendulum", "pointmass"}
    env = make_env("pendulum", 4)
    assert isinstance(env, PendulumSwingUp) and env.n_envs == 4
    assert make_env("pointmass", 2).spec.obs_dim == 6
    with pytest.raises(ConfigurationError):
        make_env("cartpole", 1)
    with pytest.raises(ConfigurationError):
        make_env("pendulum", 0)


def test_wrap_angle():
    np.testing.assert_allclose(wrap_angle(np.array([0.0, np.pi / 2, -np.pi / 2])),
                               [0.0, np.pi / 2, -np.pi / 2])
    assert wrap_angle(np.array([2 * np.pi]))[0] == pytest.approx(0.0, abs=1e-12)
    assert wrap_angle(np.array([3 * np.pi]))[0] == pytest.approx(-np.pi, abs=1e-12)
    x = np.linspace(-30, 30, 1001)
    w = wrap_angle(x)
    assert np.all(w >= -np.pi) and np.all(w < np.pi)
    np.testing.assert_allclose(np.cos(w), np.cos(x), atol=1e-12)


@pytest.mark.parametrize("name", ["pendulum", "pointmass"])
def test_reset_determinism(name):
    env = make_env(name, 8)
    obs1, st1 = env.reset(123)
    obs2, st2 = env.reset(123)
    np.testing.assert_array_equal(obs1, obs2)
    np.testing.assert_array_equal(st1.phys, st2.phys)
    obs3, _ = env.reset(124)
    assert not np.array_equal(obs1, obs3)


@pytest.mark.parametrize("name", ["pendulum", "pointmass"])
def test_step_determinism(name):
    env = make_env(name, 8)
    rng = np.random.default_rng(0)
    actions = rng.uniform(-1, 1, size=(300, 8, env.spec.action_dim))

    def run():
        obs, state = env.reset(7)
        trace = []
        for a in actions:
            res, state = env.step(state, a)
            trace.append((res.obs, res.final_obs, res.reward, res.terminated, res.truncated))
        return trace

    for t1, t2 in zip(run(), run()):
        for x, y in zip(t1, t2):
            np.testing.assert_array_equal(x, y)


def test_pendulum_init_ranges_and_obs():
    env = make_env("pendulum", 10_000)
    obs, state = env.reset(5)
    theta, theta_dot = state.phys[:, 0], state.phys[:, 1]
    assert np.all(np.abs(theta) <= np.pi) and np.all(np.abs(theta_dot) <= 1.0)
    # wide draws should cover the circle
    assert theta.min() < -2.5 and theta.max() > 2.5
    np.testing.assert_allclose(obs[:, 0] ** 2 + obs[:, 1] ** 2, 1.0, atol=1e-12)
    np.testing.assert_array_equal(obs[:, 2], theta_dot)


@pytest.mark.parametrize("name", ["pendulum", "pointmass"])
def test_reward_bounds_and_state_limits_fuzz(name):
    # one million random transitions per environment
    n_envs, n_steps = 2000, 500
    env = make_env(name, n_envs)
    obs, state = env.reset(11)
    rng = np.random.default_rng(1)
    for _ in range(n_steps):
        # deliberately out-of-range actions: the actuator must clip
        actions = rng.uniform(-3, 3, size=(n_envs, env.spec.action_dim))
        res, state = env.step(state, actions)
        assert np.all(res.reward >= env.spec.reward_low)
        assert np.all(res.reward <= env.spec.reward_high)
        assert np.all(np.isfinite(res.obs)) and np.all(np.isfinite(res.final_obs))
        assert not np.any(res.terminated & res.truncated)
        if name == "pendulum":
            assert np.all(np.abs(state.phys[:, 1]) <= 8.0)
        else:
            assert np.all(np.abs(state.phys[:, :4]) <= 1.0)


def test_pendulum_never_terminates_and_truncates_on_schedule():
    env = make_env("pendulum", 4)
    obs, state = env.reset(3)
    for t in range(1, 401):
        res, state = env.step(state, np.zeros((4, 1)))
        assert not res.terminated.any()
        expect = (t % 200) == 0
        assert np.all(res.truncated == expect)
    assert np.all(state.steps == 0)  # fresh episodes after the second cut


def test_pendulum_upright_equilibrium_is_free():
    env = make_env("pendulum", 1)
    _, state = env.reset(0)
    state.phys[:] = 0.0
    res, state = env.step(state, np.zeros((1, 1)))
    assert res.reward[0] == 0.0
    np.testing.assert_array_equal(state.phys, np.zeros((1, 2)))


def test_pendulum_reward_uses_pre_step_state():
    env = make_env("pendulum", 1)
    _, state = env.reset(0)
    theta0, dot0, act = 1.3, -2.0, 0.7
    state.phys[:] = np.array([[theta0, dot0]])
    res, _ = env.step(state, np.array([[act]]))
    torque = 2.0 * act
    expect = -(wrap_angle(np.array([theta0]))[0] ** 2 + 0.1 * dot0**2 + 0.001 * torque**2)
    assert res.reward[0] == pytest.approx(expect, rel=1e-15)


def test_pendulum_energy_drift_zero_torque():
    env = make_env("pendulum", 1)

    # moderate swing: relative drift stays small
    _, state = env.reset(0)
    state.phys[:] = np.array([[2.8, -0.5]])
    e0 = pendulum_energy(state.phys)[0]
    for _ in range(100):
        _, state = env.step(state, np.zeros((1, 1)))
        assert abs(pendulum_energy(state.phys)[0] - e0) < 0.05 * abs(e0)

    # fast swing near the separatrix: bound the error on the full
    # bottom-to-top potential scale instead (m*g*l = 10)
    _, state = env.reset(0)
    state.phys[:] = np.array([[2.0, 1.0]])
    e0 = pendulum_energy(state.phys)[0]
    for _ in range(100):
        _, state = env.step(state, np.zeros((1, 1)))
        assert abs(pendulum_energy(state.phys)[0] - e0) < 0.05 * 10.0


def test_pointmass_kinematics_exact():
    env = make_env("pointmass", 1)
    _, state = env.reset(0)
    pos0 = np.array([0.2, -0.3])
    vel0 = np.array([0.5, 0.0])
    goal = np.array([-0.4, 0.6])
    state.phys[:] = np.concatenate([pos0, vel0, goal])[None]
    action = np.array([[2.0, -0.25]])  # first component saturates at 1
    res, state = env.step(state, action)
    a = np.array([1.0, -0.25])
    vel1 = np.clip(vel0 + a * 0.1, -1, 1)
    pos1 = np.clip(pos0 + vel1 * 0.1, -1, 1)
    np.testing.assert_allclose(state.phys[0, 0:2], pos1, rtol=1e-15)
    np.testing.assert_allclose(state.phys[0, 2:4], vel1, rtol=1e-15)
    expect = -np.linalg.norm(pos1 - goal) - 0.01 * np.sum(a * a)
    assert res.reward[0] == pytest.approx(expect, rel=1e-15)
    np.testing.assert_allclose(res.final_obs[0], np.concatenate([pos1, vel1, goal - pos1]), rtol=1e-15)


def test_pointmass_goal_termination_and_auto_reset():
    env = make_env("pointmass", 1)
    _, state = env.reset(0)
    # park right next to the goal so the zero-action step stays inside it
    state.phys[:] = np.array([[0.10, 0.10, 0.0, 0.0, 0.11, 0.10]])
    state.steps[:] = 42
    res, state = env.step(state, np.zeros((1, 2)))
    assert res.terminated[0] and not res.truncated[0]
    # final_obs reflects the terminal pair, already inside the goal radius
    assert np.linalg.norm(res.final_obs[0, 4:6]) < 0.05
    # auto-reset: counter cleared, velocity zeroed, fresh pos/goal
    assert state.steps[0] == 0
    np.testing.assert_array_equal(state.phys[0, 2:4], 0.0)
    np.testing.assert_array_equal(res.obs[0], env._observe(state.phys)[0])
    assert not np.array_equal(res.obs[0], res.final_obs[0])


def test_pointmass_at_goal_zero_action():
    env = make_env("pointmass", 1)
    _, state = env.reset(0)
    state.phys[:] = np.array([[0.3, -0.2, 0.0, 0.0, 0.3, -0.2]])
    res, _ = env.step(state, np.zeros((1, 2)))
    assert res.terminated[0]
    assert res.reward[0] == 0.0


def test_termination_wins_over_truncation():
    env = make_env("pointmass", 1)
    _, state = env.reset(0)
    state.phys[:] = np.array([[0.10, 0.10, 0.0, 0.0, 0.11, 0.10]])
    state.steps[:] = 99  # this step is also the time limit
    res, _ = env.step(state, np.zeros((1, 2)))
    assert res.terminated[0] and not res.truncated[0]


def test_truncation_only_at_limit():
    env = make_env("pointmass", 1)
    _, state = env.reset(0)
    state.phys[:] = np.array([[0.8, 0.8, 0.0, 0.0, -0.8, -0.8]])
    state.steps[:] = 99
    res, state = env.step(state, np.zeros((1, 2)))
    assert res.truncated[0] and not res.terminated[0]
    assert state.steps[0] == 0


def test_final_obs_equals_obs_when_no_reset():
    env = make_env("pendulum", 8)
    _, state = env.reset(9)
    res, _ = env.step(state, np.zeros((8, 1)))
    np.testing.assert_array_equal(res.obs, res.final_obs)


def test_action_clipping_saturates():
    env = make_env("pendulum", 2)
    _, state = env.reset(21)
    state2 = BatchState(state.phys.copy(), state.steps.copy(), state.rngs)
    r1, s1 = env.step(state, np.full((2, 1), 5.0))
    r2, s2 = env.step(state2, np.full((2, 1), 1.0))
    np.testing.assert_array_equal(r1.reward, r2.reward)
    np.testing.assert_array_equal(s1.phys, s2.phys)


def test_action_validation():
    env = make_env("pendulum", 2)
    _, state = env.reset(0)
    with pytest.raises(ConfigurationError):
        env.step(state, np.zeros((2, 2)))
    bad = np.zeros((2, 1))
    bad[1, 0] = np.nan
    with pytest.raises(SimulationError) as e:
        env.step(state, bad)
    assert e.value.env_index == 1


# --- normalizer --------------------------------------------------------


def test_normalizer_identity_before_data():
    st = normalizer_init(3)
    x = np.random.default_rng(0).normal(size=(5, 3)) * 100
    np.testing.assert_array_equal(normalize(st, x), x)
    np.testing.assert_array_equal(denormalize(st, x), x)


def test_normalizer_merge_matches_full_batch_stats():
    rng = np.random.default_rng(4)
    data = rng.normal(loc=3.0, scale=2.5, size=(1000, 4))
    st = normalizer_init(4)
    # uneven chunks, including a singleton
    for chunk in np.split(data, [1, 7, 100, 555]):
        st = normalizer_update(st, chunk)
    assert st.count == 1000.0
    np.testing.assert_allclose(st.mean, data.mean(axis=0), atol=1e-10)
    np.testing.assert_allclose(st.m2 / st.count, data.var(axis=0), atol=1e-10)


def test_normalizer_whitens():
    rng = np.random.default_rng(5)
    data = rng.normal(loc=-2.0, scale=5.0, size=(4000, 2))
    st = normalizer_update(normalizer_init(2), data)
    z = normalize(st, data)
    np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(z.std(axis=0), 1.0, atol=1e-10)


def test_normalizer_clips_outliers():
    st = normalizer_update(normalizer_init(1), np.random.default_rng(6).normal(size=(100, 1)))
    z = normalize(st, np.array([[1e9], [-1e9]]))
    np.testing.assert_array_equal(z, [[10.0], [-10.0]])


def test_normalizer_round_trip_inside_clip():
    rng = np.random.default_rng(7)
    data = rng.normal(size=(500, 3))
    st = normalizer_update(normalizer_init(3), data)
    x = rng.normal(size=(10, 3))
    np.testing.assert_allclose(denormalize(st, normalize(st, x)), x, atol=1e-12)


def test_normalizer_constant_feature_floor():
    st = normalizer_update(normalizer_init(1), np.full((50, 1), 2.0))
    z = normalize(st, np.array([[2.0], [2.0 + 1e-6], [100.0]]))
    assert z[0, 0] == 0.0
    assert z[1, 0] == pytest.approx(1.0, rel=1e-9)
    assert z[2, 0] == 10.0  # clipped


def test_normalizer_shape_validation():
    st = normalizer_init(3)
    with pytest.raises(ConfigurationError):
        normalizer_update(st, np.zeros((5, 2)))
    # empty batch is a no-op
    st2 = normalizer_update(st, np.zeros((0, 3)))
    assert st2.count == 0.0
