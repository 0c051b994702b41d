import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from saen_bgs.spiking import (
    NeuronConfig,
    aggregate_membrane,
    approx_spike_count,
    encode_direct,
    if_step,
    read_spike_trace,
    run_spike_layer,
    simulate_if,
    straight_through,
    write_spike_trace,
)
from saen_bgs.tensor import ConvSpec, ShapeError


def scalar_if(current, n_steps, threshold=1.0, resistance=1.0):
    """Reference neuron: one float32 scalar stepped by hand."""
    f = np.float32
    u, s, th, r, i = f(0), f(0), f(threshold), f(resistance), f(current)
    times = []
    for step in range(1, n_steps + 1):
        u = u + r * i - th * s
        s = f(1) if u >= th else f(0)
        if s:
            times.append(step)
    return times


def const(v, shape=(1,)):
    return torch.full(shape, v, dtype=torch.float32)


def test_if_step_quiescent():
    cfg = NeuronConfig()
    u, s = if_step(const(0.0), const(0.0), const(0.0), cfg)
    assert u.item() == 0 and s.item() == 0


def test_if_step_shape_check():
    with pytest.raises(ShapeError):
        if_step(torch.zeros(2), torch.zeros(3), torch.zeros(2), NeuronConfig())


def test_constant_03_spikes_at_4_7_10():
    train = simulate_if(const(0.3), NeuronConfig(n_steps=10), constant=True)
    steps = (torch.nonzero(train[:, 0]).flatten() + 1).tolist()
    assert steps == [4, 7, 10]
    assert scalar_if(0.3, 10) == [4, 7, 10]


def test_suprathreshold_fires_every_step():
    train = simulate_if(const(1.5), NeuronConfig(n_steps=10), constant=True)
    assert train.sum().item() == 10


def test_reference_agreement_grid():
    currents = [round(0.05 * k, 2) for k in range(1, 31)]
    for n_steps in (10, 50):
        cfg = NeuronConfig(n_steps=n_steps)
        train = simulate_if(torch.tensor(currents, dtype=torch.float32), cfg, constant=True)
        for j, cur in enumerate(currents):
            got = (torch.nonzero(train[:, j]).flatten() + 1).tolist()
            assert got == scalar_if(cur, n_steps), (cur, n_steps)


@given(st.floats(0.001, 0.999), st.integers(1, 200))
def test_soft_reset_conservation(current, n_steps):
    count = len(scalar_if(current, n_steps))
    train = simulate_if(const(current), NeuronConfig(n_steps=n_steps), constant=True)
    assert train.sum().item() == count
    assert abs(count - math.floor(n_steps * np.float32(current))) <= 1


def test_spike_train_binary_and_counts():
    cfg = NeuronConfig(n_steps=10)
    cur = torch.randn(10, 4, 5) * 2
    train = simulate_if(cur, cfg)
    assert set(train.unique().tolist()) <= {0.0, 1.0}
    assert train.shape == (10, 4, 5)


def test_window_mismatch_rejected():
    with pytest.raises(ShapeError):
        simulate_if(torch.zeros(5, 3), NeuronConfig(n_steps=10))


def test_neuron_config_validation():
    with pytest.raises(ValueError):
        NeuronConfig(threshold=0)
    with pytest.raises(ValueError):
        NeuronConfig(n_steps=0)


ENC = ConvSpec(1, 1, 1, name="enc")


def test_encode_zero_frame():
    s, c = encode_direct(torch.zeros(1, 1, 4, 4), ENC, torch.ones(1, 1, 1, 1), torch.zeros(1), NeuronConfig())
    assert s.shape == (10, 1, 1, 4, 4)
    assert s.sum() == 0 and c.sum() == 0


def test_encode_single_neuron_current_03():
    s, c = encode_direct(torch.ones(1, 1, 1, 1), ENC, const(0.3).view(1, 1, 1, 1), torch.zeros(1), NeuronConfig())
    assert c.item() == 3
    assert torch.equal(s.sum(0), c)


def test_encode_monotone_in_current():
    cfg = NeuronConfig()
    currents = np.round(np.arange(0.05, 1.0001, 0.05), 2)
    counts = []
    for cur in currents:
        _, c = encode_direct(torch.ones(1, 1, 1, 1), ENC, const(float(cur)).view(1, 1, 1, 1), torch.zeros(1), cfg)
        _, c2 = encode_direct(torch.ones(1, 1, 1, 1), ENC, const(float(2 * cur)).view(1, 1, 1, 1), torch.zeros(1), cfg)
        assert c2.item() >= c.item()
        counts.append(c.item())
    assert counts == sorted(counts)


@settings(max_examples=50)
@given(st.floats(-2, 2), st.floats(0, 1), st.integers(1, 40))
def test_monotone_in_any_current(base, bump, n_steps):
    cfg = NeuronConfig(n_steps=n_steps)
    lo = simulate_if(const(base), cfg, constant=True).sum()
    hi = simulate_if(const(base + bump), cfg, constant=True).sum()
    assert hi >= lo


IDENT = ConvSpec(1, 1, 1, name="ident")


def test_spike_layer_zero_input():
    s, c = run_spike_layer(torch.zeros(10, 1, 1, 3, 3), IDENT, torch.ones(1, 1, 1, 1), torch.zeros(1), NeuronConfig())
    assert s.sum() == 0 and c.sum() == 0


def test_spike_layer_identity_relay():
    s_in = torch.ones(10, 1, 1, 2, 2)
    s, c = run_spike_layer(s_in, IDENT, torch.ones(1, 1, 1, 1), torch.zeros(1), NeuronConfig())
    assert torch.equal(s, s_in)
    assert torch.all(c == 10)


def test_spike_layer_count_bound_and_sum():
    g = torch.Generator().manual_seed(1)
    cfg = NeuronConfig()
    spec = ConvSpec(4, 6, 3, 1, 1)
    s_in = (torch.rand(10, 2, 4, 5, 5, generator=g) < 0.4).float()
    s, c = run_spike_layer(s_in, spec, torch.randn(6, 4, 3, 3, generator=g), torch.randn(6, generator=g), cfg)
    assert c.max() <= 10 and c.min() >= 0
    assert torch.equal(c, s.sum(0))
    assert set(s.unique().tolist()) <= {0.0, 1.0}


def test_spike_layer_window_mismatch():
    with pytest.raises(ShapeError):
        run_spike_layer(torch.zeros(5, 1, 1, 2, 2), IDENT, torch.ones(1, 1, 1, 1), torch.zeros(1), NeuronConfig())


def test_transposed_spike_layer_shape():
    spec = ConvSpec(2, 3, 4, 2, 1, transposed=True)
    s, c = run_spike_layer(torch.ones(10, 1, 2, 4, 4), spec, torch.rand(2, 3, 4, 4), torch.zeros(3), NeuronConfig())
    assert s.shape == (10, 1, 3, 8, 8)


def test_approx_zero():
    a = approx_spike_count(torch.zeros(1, 1, 2, 2), IDENT, torch.ones(1, 1, 1, 1), torch.zeros(1), NeuronConfig())
    assert torch.all(a == 0)


def test_approx_single_synapse():
    a = approx_spike_count(const(3.0).view(1, 1, 1, 1), IDENT, const(0.1).view(1, 1, 1, 1), torch.zeros(1), NeuronConfig())
    assert a.item() == pytest.approx(0.3, abs=1e-6)


def test_approx_negative_drive_clamped():
    a = approx_spike_count(const(2.0).view(1, 1, 1, 1), IDENT, const(-0.5).view(1, 1, 1, 1), torch.zeros(1), NeuronConfig())
    assert a.item() == 0


def test_approx_bias_scaled_by_window():
    cfg = NeuronConfig(n_steps=10)
    a = approx_spike_count(torch.zeros(1, 1, 1, 1), IDENT, torch.ones(1, 1, 1, 1), const(0.25), cfg)
    assert a.item() == pytest.approx(2.5)


def test_aggregate_zero_counts():
    out = aggregate_membrane(torch.zeros(1, 1, 2, 2), IDENT, torch.ones(1, 1, 1, 1), torch.zeros(1))
    assert torch.all(out == 0)


def test_aggregate_affine():
    out = aggregate_membrane(const(3.0).view(1, 1, 1, 1), IDENT, const(2.0).view(1, 1, 1, 1), const(1.0))
    assert out.item() == 7.0


def test_aggregate_linear_in_counts():
    g = torch.Generator().manual_seed(2)
    spec = ConvSpec(3, 2, 1)
    w = torch.randn(2, 3, 1, 1, generator=g)
    c1 = torch.randint(0, 11, (1, 3, 4, 4), generator=g).float()
    c2 = torch.randint(0, 11, (1, 3, 4, 4), generator=g).float()
    lhs = aggregate_membrane(c1 + 2 * c2, spec, w, None)
    rhs = aggregate_membrane(c1, spec, w, None) + 2 * aggregate_membrane(c2, spec, w, None)
    assert torch.allclose(lhs, rhs, atol=1e-4)


def test_straight_through_value_and_gradient():
    a = torch.tensor([0.4, 2.6], requires_grad=True)
    c = torch.tensor([0.0, 3.0])
    out = straight_through(a, c)
    assert torch.equal(out, c)
    (out * torch.tensor([2.0, 5.0])).sum().backward()
    assert a.grad.tolist() == [2.0, 5.0]


def test_spike_trace_round_trip(tmp_path):
    g = torch.Generator().manual_seed(0)
    rasters = {
        "enc": (torch.rand(10, 1, 3, 4, 4, generator=g) < 0.3).float(),
        "conv1": (torch.rand(10, 1, 5, 4, 4, generator=g) < 0.1).float(),
    }
    path = tmp_path / "trace.tsv"
    write_spike_trace(path, rasters)
    text = path.read_text()
    assert text.startswith("# saen-spike-trace v1\n# n_steps 10\n")
    back = read_spike_trace(path)
    assert list(back) == ["enc", "conv1"]
    for k in rasters:
        assert torch.equal(back[k], rasters[k])


@given(st.floats(0.1, 5.0), st.integers(0, 1000))
def test_doubling_threshold_halves_approximation(theta, seed):
    g = torch.Generator().manual_seed(seed)
    spec = ConvSpec(3, 2, 3, 1, 1)
    c_in = torch.randint(0, 11, (1, 3, 4, 4), generator=g).float()
    w, b = torch.randn(2, 3, 3, 3, generator=g), torch.randn(2, generator=g)
    a1 = approx_spike_count(c_in, spec, w, b, NeuronConfig(threshold=theta))
    a2 = approx_spike_count(c_in, spec, w, b, NeuronConfig(threshold=2 * theta))
    assert torch.allclose(a2, a1 / 2, rtol=1e-6, atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 16), st.integers(1, 4), st.floats(0.1, 1.0), st.integers(0, 2**20))
def test_subthreshold_drive_count_within_one(n_in, n_out, budget, seed):
    # non-negative weights whose summed drive per step stays at or under threshold
    g = torch.Generator().manual_seed(seed)
    cfg = NeuronConfig(n_steps=20)
    spec = ConvSpec(n_in, n_out, 1)
    w = torch.rand(n_out, n_in, 1, 1, generator=g)
    w = w * budget / w.sum(1, keepdim=True)
    s_in = simulate_if(torch.rand(1, n_in, 3, 3, generator=g), cfg, constant=True)
    _, c = run_spike_layer(s_in, spec, w, torch.zeros(n_out), cfg)
    a = approx_spike_count(s_in.sum(0), spec, w, torch.zeros(n_out), cfg)
    assert torch.all((c - torch.round(a)).abs() <= 1)
    assert torch.all(c <= a + 1e-4)
