"""Surrogate nets: forward, gradients, training, embedding, and SP models."""

import math

import numpy as np
import pytest

from gridstorm import milp
from gridstorm.core import CaseConfig
from gridstorm.emergency import build, simulate, solve_model
from gridstorm.hazard import null_scenario
from gridstorm.surrogate import (
    BoundarySpec,
    Mlp,
    SurrogateError,
    TrainingSet,
    boundary_spec,
    build_sp_model,
    embed,
    forward,
    generate_samples,
    load_mlp,
    mse_loss_and_grads,
    neuron_bounds,
    save_mlp,
    sp_objective,
    train,
)

from conftest import make_toy_case

CFG = CaseConfig(soc_levels=4, soc_min_final=1, delay_max=2)


def make_mlp(sizes, rng=None, scale=1.0):
    rng = rng or np.random.default_rng(0)
    weights = [rng.normal(0, scale, size=(sizes[l + 1], sizes[l]))
               for l in range(len(sizes) - 1)]
    biases = [rng.normal(0, scale, size=sizes[l + 1])
              for l in range(len(sizes) - 1)]
    return Mlp(tuple(sizes), weights, biases,
               np.zeros(sizes[0]), np.ones(sizes[0]), 0.0, 1.0)


def constant_mlp(dim, value):
    """Network that outputs ``value`` for every input (constant in the output
    normalization, as training a constant target would produce)."""
    weights = [np.zeros((1, dim)), np.zeros((1, 1))]
    biases = [np.zeros(1), np.zeros(1)]
    return Mlp((dim, 1, 1), weights, biases, np.zeros(dim), np.ones(dim),
               value, 1.0)


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

def test_single_neuron_relu_clamp():
    mlp = Mlp((1, 1, 1), [np.array([[1.0]]), np.array([[1.0]])],
              [np.array([0.0]), np.array([0.0])],
              np.zeros(1), np.ones(1), 0.0, 1.0)
    assert forward(mlp, [-1.0]) == 0.0
    assert forward(mlp, [2.0]) == 2.0


def test_forward_dimension_mismatch():
    mlp = make_mlp((3, 4, 1))
    with pytest.raises(SurrogateError):
        forward(mlp, [1.0, 2.0])


def oracle_forward(mlp, x):
    """Independent plain-python forward implementation."""
    z = [(x[j] - mlp.in_shift[j]) / mlp.in_scale[j] for j in range(len(x))]
    for l in range(len(mlp.weights)):
        out = []
        for i in range(mlp.weights[l].shape[0]):
            w = mlp.biases[l][i]
            for j in range(len(z)):
                w += mlp.weights[l][i][j] * z[j]
            if l < len(mlp.weights) - 1:
                w = max(0.0, w)
            out.append(w)
        z = out
    return z[0] * mlp.out_scale + mlp.out_shift


def test_forward_matches_independent_implementation():
    rng = np.random.default_rng(42)
    mlp = make_mlp((2, 8, 8, 1), rng)
    mlp.in_shift = np.array([-1.0, 0.5])
    mlp.in_scale = np.array([2.0, 1.5])
    mlp.out_shift, mlp.out_scale = 3.0, 7.0
    for _ in range(100):
        x = rng.uniform(-3, 3, size=2)
        assert forward(mlp, x) == pytest.approx(oracle_forward(mlp, x),
                                                rel=1e-12, abs=1e-12)


# ---------------------------------------------------------------------------
# gradients and training
# ---------------------------------------------------------------------------

def test_analytic_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    for trial in range(5):
        sizes = (3, 5, 4, 1)
        weights = [rng.normal(0, 1, size=(sizes[l + 1], sizes[l]))
                   for l in range(3)]
        biases = [rng.normal(0, 1, size=sizes[l + 1]) for l in range(3)]
        z = rng.uniform(0, 1, size=(12, 3))
        y = rng.uniform(0, 1, size=12)
        loss, gw, gb = mse_loss_and_grads(weights, biases, z, y)
        eps = 1e-5
        worst = 0.0
        for l in range(3):
            for idx in np.ndindex(weights[l].shape):
                orig = weights[l][idx]
                weights[l][idx] = orig + eps
                lp, _, _ = mse_loss_and_grads(weights, biases, z, y)
                weights[l][idx] = orig - eps
                lm, _, _ = mse_loss_and_grads(weights, biases, z, y)
                weights[l][idx] = orig
                fd = (lp - lm) / (2 * eps)
                denom = max(1e-8, abs(fd), abs(gw[l][idx]))
                worst = max(worst, abs(fd - gw[l][idx]) / denom)
            for i in range(len(biases[l])):
                orig = biases[l][i]
                biases[l][i] = orig + eps
                lp, _, _ = mse_loss_and_grads(weights, biases, z, y)
                biases[l][i] = orig - eps
                lm, _, _ = mse_loss_and_grads(weights, biases, z, y)
                biases[l][i] = orig
                fd = (lp - lm) / (2 * eps)
                denom = max(1e-8, abs(fd), abs(gb[l][i]))
                worst = max(worst, abs(fd - gb[l][i]) / denom)
        assert worst < 1e-4, f"trial {trial}: max relative gradient error {worst}"


def linear_training_set(n=32):
    spec = BoundarySpec("heat", (("src_cap", "s", 0, 0.0, 1.0),))
    X = np.linspace(0, 1, n)[:, None]
    return TrainingSet(spec, X, 2.0 * X[:, 0], np.zeros(n, dtype=bool), 0)


def test_train_linear_target_converges():
    mlp = train(linear_training_set(), arch=(1,), epochs=6000, step=0.2, seed=1)
    z = np.linspace(0, 1, 21)
    mse = np.mean([(forward(mlp, [x]) - 2.0 * x) ** 2 for x in z])
    assert mse < 1e-3
    assert mlp.loss_history[-1] < mlp.loss_history[0]


def test_train_constant_target():
    spec = BoundarySpec("heat", (("src_cap", "s", 0, 0.0, 1.0),))
    X = np.linspace(0, 1, 16)[:, None]
    ts = TrainingSet(spec, X, np.full(16, 3.25), np.zeros(16, dtype=bool), 0)
    mlp = train(ts, arch=(4,), epochs=3000, step=0.1, seed=2)
    for x in np.linspace(0, 1, 11):
        assert abs(forward(mlp, [x]) - 3.25) < 1e-3


def test_train_determinism():
    ts = linear_training_set()
    m1 = train(ts, arch=(4, 4), epochs=500, step=0.1, seed=9)
    m2 = train(ts, arch=(4, 4), epochs=500, step=0.1, seed=9)
    for a, b in zip(m1.weights, m2.weights):
        assert np.array_equal(a, b)
    for a, b in zip(m1.biases, m2.biases):
        assert np.array_equal(a, b)


def test_mlp_json_roundtrip(tmp_path):
    mlp = train(linear_training_set(), arch=(3,), epochs=200, step=0.1, seed=3)
    save_mlp(mlp, tmp_path / "m.json")
    m2 = load_mlp(tmp_path / "m.json")
    for x in (0.0, 0.3, 1.0):
        assert forward(m2, [x]) == pytest.approx(forward(mlp, [x]), abs=1e-12)


# ---------------------------------------------------------------------------
# interval bounds and embedding
# ---------------------------------------------------------------------------

def test_neuron_bounds_contain_all_preactivations():
    rng = np.random.default_rng(3)
    mlp = make_mlp((3, 6, 6, 1), rng)
    lo = np.array([-1.0, 0.0, 2.0])
    hi = np.array([1.0, 2.0, 5.0])
    nb = neuron_bounds(mlp, lo, hi)
    for _ in range(10_000):
        x = rng.uniform(lo, hi)
        z = (x - mlp.in_shift) / mlp.in_scale
        for l in range(len(mlp.weights)):
            pre = mlp.weights[l] @ z + mlp.biases[l]
            assert np.all(pre >= nb.pre_lo[l] - 1e-9)
            assert np.all(pre <= nb.pre_hi[l] + 1e-9)
            z = np.maximum(0.0, pre)


def embed_and_maximize(mlp, x_fix, in_lo, in_hi):
    """Embed with wide input bounds, pin inputs by equality, maximize output."""
    m = milp.MilpModel("embed")
    input_vars = [m.add_var(in_lo[j], in_hi[j], name=f"in{j}")
                  for j in range(len(x_fix))]
    nb = neuron_bounds(mlp, in_lo, in_hi)
    out = embed(m, mlp, input_vars, nb)
    for j, v in enumerate(input_vars):
        m.add_constraint([(v, 1.0)], "=", float(x_fix[j]))
    m.set_objective("max", [(out, 1.0)])
    sol = milp.solve(m, milp.SolverConfig(rel_gap=0.0))
    assert sol.status == "optimal"
    return sol.objective_value, m


def test_embedding_matches_forward_on_random_nets():
    rng = np.random.default_rng(11)
    for trial in range(20):
        dims = (2, int(rng.integers(2, 9)), int(rng.integers(2, 9)), 1)
        mlp = make_mlp(dims, rng)
        in_lo = np.array([-1.0, -2.0])
        in_hi = np.array([2.0, 1.0])
        x = rng.uniform(in_lo, in_hi)
        got, _ = embed_and_maximize(mlp, x, in_lo, in_hi)
        assert got == pytest.approx(forward(mlp, x), abs=1e-6), f"trial {trial}"


def test_identity_net_output_bounds():
    mlp = Mlp((1, 1, 1), [np.array([[1.0]]), np.array([[1.0]])],
              [np.array([0.0]), np.array([0.0])],
              np.zeros(1), np.ones(1), 0.0, 1.0)
    m = milp.MilpModel()
    x = m.add_var(0.0, 1.0, name="x")
    nb = neuron_bounds(mlp, [0.0], [1.0])
    out = embed(m, mlp, [x], nb)
    assert m.variables[out].lower == pytest.approx(0.0)
    assert m.variables[out].upper == pytest.approx(1.0)
    # stably active everywhere: no binaries needed
    assert m.num_binaries == 0


def test_dead_neuron_fixed_no_binary():
    mlp = Mlp((1, 1, 1), [np.array([[0.0]]), np.array([[1.0]])],
              [np.array([-5.0]), np.array([2.0])],
              np.zeros(1), np.ones(1), 0.0, 1.0)
    m = milp.MilpModel()
    x = m.add_var(0.0, 1.0, name="x")
    out = embed(m, mlp, [x], neuron_bounds(mlp, [0.0], [1.0]))
    assert m.num_binaries == 0
    m.set_objective("max", [(out, 1.0)])
    sol = milp.solve(m)
    assert sol.objective_value == pytest.approx(2.0)   # ReLU(-5)=0, then +2


def test_embed_refuses_unbounded_inputs():
    mlp = make_mlp((1, 2, 1))
    m = milp.MilpModel()
    x = m.add_var(0.0, math.inf, name="x")
    with pytest.raises(SurrogateError):
        embed(m, mlp, [x], neuron_bounds(mlp, [0.0], [1.0]))


# ---------------------------------------------------------------------------
# sample generation
# ---------------------------------------------------------------------------

def test_heat_samples_nominal_and_degraded_corners(toy_case):
    ts = generate_samples("heat", toy_case, CFG, n=6, seed=1)
    base = simulate(toy_case, CFG, null_scenario(toy_case))
    # row 0 is the fully-nominal corner: equals the disaster-free heat value
    assert ts.labels[0] == pytest.approx(base.objective_heat, abs=1e-6)
    # row 1 is fully degraded: zero capacity everywhere -> zero heat value
    assert ts.labels[1] == pytest.approx(0.0, abs=1e-9)
    assert not ts.infeasible[0] and not ts.infeasible[1]


def test_transport_samples_nominal_corner(toy_case):
    ts = generate_samples("transport", toy_case, CFG, n=4, seed=2)
    base = simulate(toy_case, CFG, null_scenario(toy_case))
    assert ts.labels[0] == pytest.approx(base.objective_transport, abs=1e-6)
    assert ts.inputs.shape[1] == ts.spec.dim


def test_heat_labels_match_resolve_oracle(toy_case):
    ts = generate_samples("heat", toy_case, CFG, n=10, seed=3)
    from gridstorm.surrogate import _heat_objective_for
    for i, row in enumerate(ts.inputs):
        feats = {(k, s, t): row[j]
                 for j, (k, s, t, _, _) in enumerate(ts.spec.features)}
        caps = {(s, t): v for (k, s, t), v in feats.items() if k == "src_cap"}
        draws = {(s, t): v for (k, s, t), v in feats.items() if k == "boiler_draw"}
        val = _heat_objective_for(toy_case, caps, draws)
        assert ts.labels[i] == pytest.approx(0.0 if val is None else val, abs=1e-6)


# ---------------------------------------------------------------------------
# surrogate-plus-power model
# ---------------------------------------------------------------------------

def test_sp_with_constant_surrogates_decouples(toy_case):
    heat_spec = boundary_spec("heat", toy_case, CFG)
    trans_spec = boundary_spec("transport", toy_case, CFG)
    c1, c2 = 17.0, 5.5
    em, outs = build_sp_model(toy_case, CFG, null_scenario(toy_case),
                              constant_mlp(heat_spec.dim, c1),
                              constant_mlp(trans_spec.dim, c2))
    sol = solve_model(em)
    assert sol.status == "optimal"
    # power-only optimum: build the power-mode model for reference
    em_p = build(toy_case, CFG, null_scenario(toy_case), mode="power")
    sol_p = solve_model(em_p)
    assert sol.objective_value == pytest.approx(
        sol_p.objective_value + c1 + c2, abs=1e-5)


def test_sp_model_smaller_than_full(toy_case):
    heat_spec = boundary_spec("heat", toy_case, CFG)
    trans_spec = boundary_spec("transport", toy_case, CFG)
    em_sp, _ = build_sp_model(toy_case, CFG, null_scenario(toy_case),
                              constant_mlp(heat_spec.dim, 1.0),
                              constant_mlp(trans_spec.dim, 1.0))
    em_full = build(toy_case, CFG, null_scenario(toy_case))
    assert em_sp.milp.num_vars < em_full.milp.num_vars


def test_sp_digest_mismatch_rejected(toy_case):
    heat_spec = boundary_spec("heat", toy_case, CFG)
    trans_spec = boundary_spec("transport", toy_case, CFG)
    bad = constant_mlp(heat_spec.dim, 1.0)
    bad.spec_digest = "deadbeef"
    with pytest.raises(SurrogateError):
        build_sp_model(toy_case, CFG, null_scenario(toy_case), bad,
                       constant_mlp(trans_spec.dim, 1.0))


def test_sp_objective_with_trained_surrogates_close_to_full(toy_case):
    # small but real training run; fidelity is loose here (the acceptance
    # suite checks the tutorial-case bound)
    hs = generate_samples("heat", toy_case, CFG, n=40, seed=4)
    trn = generate_samples("transport", toy_case, CFG, n=40, seed=5)
    heat_mlp = train(hs, arch=(8,), epochs=3000, step=0.1, seed=6)
    trans_mlp = train(trn, arch=(8,), epochs=3000, step=0.1, seed=7)
    full = simulate(toy_case, CFG, null_scenario(toy_case))
    sp = sp_objective(toy_case, CFG, null_scenario(toy_case), heat_mlp, trans_mlp)
    assert abs(sp - full.objective_total) / full.objective_total < 0.25
