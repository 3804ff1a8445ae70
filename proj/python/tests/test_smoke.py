import math

import numpy as np
import pytest

import damm


def test_sphere_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(50):
        p = rng.normal(size=3)
        q = rng.normal(size=3)
        p /= np.linalg.norm(p)
        q /= np.linalg.norm(q)
        v = damm.sphere.log_map(p, q)
        assert np.allclose(damm.sphere.exp_map(p, v), q, atol=1e-9)
        assert math.isclose(np.linalg.norm(v), damm.sphere.geodesic_distance(p, q), abs_tol=1e-9)


def test_sphere_errors():
    with pytest.raises(damm.DegenerateInputError):
        damm.sphere.log_map(np.array([1.0, 0.0]), np.array([-1.0, 0.0]))
    with pytest.raises(damm.UsageError):
        damm.sphere.geodesic_distance(np.array([2.0, 0.0]), np.array([1.0, 0.0]))


def test_frechet_mean_on_circle():
    angles = np.array([0.1, 0.2, 0.3])
    pts = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    mean, _, converged = damm.sphere.frechet_mean(pts)
    assert converged
    assert math.isclose(math.atan2(mean[1], mean[0]), 0.2, abs_tol=1e-9)


def test_learn_rollout_and_metrics(tmp_path):
    demo = damm.synthetic_demo("s-curve", seed=1)
    model = damm.learn(demo, seed=1, workers=1)
    ds = model.dynamics
    assert model.num_components >= 1
    assert len(model.assignments) == len(demo)
    for k in range(ds.num_components):
        assert ds.max_symmetric_eigenvalue(k) <= -1e-6
    assert math.isclose(ds.mixing_weights(demo.positions[0]).sum(), 1.0, abs_tol=1e-9)
    trace = ds.rollout(demo.positions[0], max_steps=20000)
    assert trace.converged
    assert np.linalg.norm(trace.states[-1] - demo.attractor) <= 1e-3
    assert damm.edot(ds, demo) <= 0.15
    assert damm.dtwd(demo.positions, demo.positions) == 0.0

    path = tmp_path / "model.json"
    model.save(str(path))
    again = damm.load_model(str(path))
    assert again.to_json() == model.to_json()
    assert np.array_equal(again.dynamics.evaluate(demo.positions[5]), ds.evaluate(demo.positions[5]))


def test_demonstration_from_arrays():
    t = np.linspace(0.0, 1.0, 50)
    pos = np.stack([1.0 - t, 0.5 * (1.0 - t) ** 2], axis=1)
    demo = damm.Demonstration(pos, dt=0.02)
    assert np.allclose(demo.attractor, pos[-1])
    assert np.allclose(demo.velocities[10], (pos[11] - pos[9]) / 0.04)
    with pytest.raises(damm.UsageError):
        damm.Demonstration(pos)


def test_benchmark_and_cli(tmp_path):
    demo = damm.synthetic_demo("line", seed=2)
    report = damm.benchmark(demo, method="gmm-p", seed=2, workers=1)
    assert report["method"] == "gmm-p"
    assert report["K_final"] >= 1
    data = tmp_path / "demo.csv"
    demo.save(str(data))
    code, out, _ = damm.cli(["learn", str(data), "-o", str(tmp_path / "m.json"), "--seed", "2"])
    assert code == 0, out
    code, _, err = damm.cli(["learn", str(tmp_path / "missing.csv"), "-o", str(tmp_path / "x.json")])
    assert code == 1 and err
