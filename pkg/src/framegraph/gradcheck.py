"""Finite-difference gradient verification.

Central differences (step 1e-5) against the tape's analytic gradients,
reported as a max relative error normalised by the largest gradient
magnitude.  Scopes: every differentiable operation on random small shapes,
whole sub-modules (encoder, graph module, two-module stack), the full
end-to-end model, and the stop-gradient contract of the fusion branch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import DIFFERENTIABLE_OPS, Tape, Tensor, backward, parameter
from .encoder import encode_sequence, init_encoder
from .errors import ConfigError
from .fusion import intensity_weights
from .graph import graph_module_forward, identity_adjacency, init_birecurrent, init_graph_conv, stacked_forward
from .model import ModelConfig, init_model, model_forward, current_intensity_weights

__all__ = [
    "FD_STEP",
    "TOLERANCE",
    "CheckResult",
    "GradcheckReport",
    "numeric_gradient",
    "max_relative_error",
    "fd_check",
    "check_ops",
    "check_modules",
    "check_end_to_end",
    "check_stop_gradient",
    "run_gradcheck",
    "OP_CASES",
    "SCOPES",
]

FD_STEP = 1e-5
TOLERANCE = 1e-4


def numeric_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central finite differences of a scalar function, element by element."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = grad.reshape(-1)
    base = np.array(x, dtype=np.float64)
    for i in range(base.size):
        bumped = base.copy()
        bumped.reshape(-1)[i] += step
        up = f(bumped)
        bumped.reshape(-1)[i] -= 2 * step
        down = f(bumped)
        flat[i] = (up - down) / (2 * step)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst absolute deviation over the largest gradient magnitude."""
    scale = max(float(np.abs(analytic).max(initial=0.0)),
                float(np.abs(numeric).max(initial=0.0)), 1e-6)
    return float(np.abs(analytic - numeric).max(initial=0.0)) / scale


def fd_check(params: list[Tensor], run: Callable[[Tape], Tensor], step: float = FD_STEP) -> float:
    """Compare the tape gradient of ``run``'s scalar output with central
    differences over every entry of every parameter; returns the worst
    relative error."""
    tape = Tape()
    loss = run(tape)
    backward(tape, loss, params)
    analytic = [p.grad.copy() for p in params]
    for p in params:
        p.grad = None
    worst = 0.0
    for p, a in zip(params, analytic):
        def evaluate(arr: np.ndarray, p=p) -> float:
            saved = p.values
            p.values = arr
            try:
                return run(Tape(record=False)).item()
            finally:
                p.values = saved

        numeric = numeric_gradient(evaluate, p.values, step)
        worst = max(worst, max_relative_error(a, numeric))
    return worst


@dataclass
class CheckResult:
    name: str
    worst_error: float
    passed: bool
    note: str = ""


@dataclass
class GradcheckReport:
    scope: str
    results: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def lines(self) -> list[str]:
        out = []
        for r in self.results:
            status = "PASS" if r.passed else "FAIL"
            note = f"  ({r.note})" if r.note else ""
            out.append(f"{status}  {r.name}: worst relative error {r.worst_error:.3e}{note}")
        out.append(f"gradcheck scope '{self.scope}': {'PASS' if self.passed else 'FAIL'}")
        return out


def _away_from_zero(rng: np.random.Generator, shape) -> np.ndarray:
    """Values with magnitude in [0.1, 1.5]; keeps finite differences clear
    of the leaky-ReLU kink."""
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return sign * rng.uniform(0.1, 1.5, shape)


def _rand_weight(rng: np.random.Generator, rows: int, cols: int) -> Tensor:
    return parameter(rng.uniform(-1.0, 1.0, (rows, cols)))


def _linear_probe(tape: Tape, out: Tensor, probe: np.ndarray) -> Tensor:
    """sum(out * fixed random probe): a scalar functional whose gradient
    pattern exposes transposition and indexing mistakes."""
    return tape.sum_all(tape.multiply(out, Tensor(probe)))


# One registered case per differentiable operation kind.  Each entry maps
# an rng to (params, run) where run(tape) returns the scalar loss.

def _case_matmul(rng):
    a = _rand_weight(rng, 2, 3)
    b = _rand_weight(rng, 3, 4)
    probe = rng.normal(size=(2, 4))
    return [a, b], lambda t: _linear_probe(t, t.matmul(a, b), probe)


def _case_add(rng):
    a, b = _rand_weight(rng, 3, 2), _rand_weight(rng, 3, 2)
    probe = rng.normal(size=(3, 2))
    return [a, b], lambda t: _linear_probe(t, t.add(a, b), probe)


def _case_multiply(rng):
    a, b = _rand_weight(rng, 2, 4), _rand_weight(rng, 2, 4)
    probe = rng.normal(size=(2, 4))
    return [a, b], lambda t: _linear_probe(t, t.multiply(a, b), probe)


def _case_scale(rng):
    a = _rand_weight(rng, 3, 3)
    factor = float(rng.uniform(-2.0, 2.0))
    probe = rng.normal(size=(3, 3))
    return [a], lambda t: _linear_probe(t, t.scale(a, factor), probe)


def _case_add_row(rng):
    a, row = _rand_weight(rng, 4, 3), _rand_weight(rng, 1, 3)
    probe = rng.normal(size=(4, 3))
    return [a, row], lambda t: _linear_probe(t, t.add_row(a, row), probe)


def _case_transpose(rng):
    a = _rand_weight(rng, 2, 5)
    probe = rng.normal(size=(5, 2))
    return [a], lambda t: _linear_probe(t, t.transpose(a), probe)


def _case_select_rows(rng):
    a = _rand_weight(rng, 5, 3)
    idx = rng.integers(0, 5, size=4)  # repeats exercise accumulation
    probe = rng.normal(size=(4, 3))
    return [a], lambda t: _linear_probe(t, t.select_rows(a, idx), probe)


def _case_select_cols(rng):
    a = _rand_weight(rng, 3, 5)
    idx = rng.integers(0, 5, size=4)
    probe = rng.normal(size=(3, 4))
    return [a], lambda t: _linear_probe(t, t.select_cols(a, idx), probe)


def _case_stack_rows(rng):
    parts = [_rand_weight(rng, 2, 3), _rand_weight(rng, 1, 3), _rand_weight(rng, 3, 3)]
    probe = rng.normal(size=(6, 3))
    return parts, lambda t: _linear_probe(t, t.stack_rows(parts), probe)


def _case_concat_cols(rng):
    parts = [_rand_weight(rng, 2, 2), _rand_weight(rng, 2, 3)]
    probe = rng.normal(size=(2, 5))
    return parts, lambda t: _linear_probe(t, t.concat_cols(parts), probe)


def _case_reshape(rng):
    a = _rand_weight(rng, 2, 6)
    probe = rng.normal(size=(4, 3))
    return [a], lambda t: _linear_probe(t, t.reshape(a, 4, 3), probe)


def _case_gather_rows(rng):
    a = _rand_weight(rng, 5, 2)
    idx = rng.integers(-1, 5, size=(4, 3))  # -1 exercises the zero-pad row
    probe = rng.normal(size=(4, 6))
    return [a], lambda t: _linear_probe(t, t.gather_rows(a, idx), probe)


def _case_mean_pool_rows(rng):
    a = _rand_weight(rng, 8, 3)
    groups = rng.permutation(8).reshape(4, 2)
    probe = rng.normal(size=(4, 3))
    return [a], lambda t: _linear_probe(t, t.mean_pool_rows(a, groups), probe)


def _case_mean_over_rows(rng):
    a = _rand_weight(rng, 4, 3)
    probe = rng.normal(size=(1, 3))
    return [a], lambda t: _linear_probe(t, t.mean_over_rows(a), probe)


def _case_sum_all(rng):
    a = _rand_weight(rng, 3, 4)
    factor = float(rng.uniform(0.5, 2.0))
    return [a], lambda t: t.scale(t.sum_all(a), factor)


def _case_leaky_relu(rng):
    a = parameter(_away_from_zero(rng, (3, 4)))
    probe = rng.normal(size=(3, 4))
    return [a], lambda t: _linear_probe(t, t.leaky_relu(a, 0.2), probe)


def _case_sigmoid(rng):
    a = _rand_weight(rng, 2, 4)
    probe = rng.normal(size=(2, 4))
    return [a], lambda t: _linear_probe(t, t.sigmoid(a), probe)


def _case_tanh(rng):
    a = _rand_weight(rng, 2, 4)
    probe = rng.normal(size=(2, 4))
    return [a], lambda t: _linear_probe(t, t.tanh(a), probe)


def _case_softmax_vector(rng):
    a = _rand_weight(rng, 1, 5)
    probe = rng.normal(size=(1, 5))
    return [a], lambda t: _linear_probe(t, t.softmax_vector(a), probe)


def _case_cross_entropy(rng):
    a = _rand_weight(rng, 1, 4)
    label = int(rng.integers(0, 4))
    return [a], lambda t: t.cross_entropy(a, label)


OP_CASES: dict[str, Callable] = {
    "matmul": _case_matmul,
    "add": _case_add,
    "multiply": _case_multiply,
    "scale": _case_scale,
    "add_row": _case_add_row,
    "transpose": _case_transpose,
    "select_rows": _case_select_rows,
    "select_cols": _case_select_cols,
    "stack_rows": _case_stack_rows,
    "concat_cols": _case_concat_cols,
    "reshape": _case_reshape,
    "gather_rows": _case_gather_rows,
    "mean_pool_rows": _case_mean_pool_rows,
    "mean_over_rows": _case_mean_over_rows,
    "sum_all": _case_sum_all,
    "leaky_relu": _case_leaky_relu,
    "sigmoid": _case_sigmoid,
    "tanh": _case_tanh,
    "softmax_vector": _case_softmax_vector,
    "cross_entropy": _case_cross_entropy,
}


def assert_registry_covers_all_ops() -> None:
    """Every differentiable op kind must have a registered check case."""
    missing = DIFFERENTIABLE_OPS - set(OP_CASES)
    if missing:
        raise ConfigError(f"gradcheck registry misses operations: {sorted(missing)}")


def check_ops(trials: int = 20, seed: int = 0, tolerance: float = TOLERANCE) -> list[CheckResult]:
    """Finite-difference every operation on ``trials`` random instances."""
    assert_registry_covers_all_ops()
    results = []
    for kind in sorted(OP_CASES):
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(trials):
            params, run = OP_CASES[kind](rng)
            worst = max(worst, fd_check(params, run))
        results.append(CheckResult(f"op {kind}", worst, worst < tolerance))
    return results


def _graph_module_case(seed: int):
    rng = np.random.default_rng(seed)
    n, dim = 3, 4
    features = Tensor(_away_from_zero(rng, (n, dim)))
    adjacency = identity_adjacency(n)
    adjacency.values += rng.normal(0, 0.2, (n, n))
    conv = init_graph_conv(dim, rng)
    rec = init_birecurrent(dim, rng)
    params = [adjacency, conv.weight, rec.embed_fwd, rec.embed_bwd,
              rec.project_fwd, rec.project_bwd, rec.bias]
    probe = rng.normal(size=(n, dim))
    return params, lambda t: _linear_probe(
        t, graph_module_forward(t, features, adjacency, conv, rec), probe
    )


def _stack_case(seed: int):
    rng = np.random.default_rng(seed)
    n, dim = 3, 4
    features = Tensor(_away_from_zero(rng, (n, dim)))
    adjacency = identity_adjacency(n)
    adjacency.values += rng.normal(0, 0.2, (n, n))
    modules = [(init_graph_conv(dim, rng), init_birecurrent(dim, rng)) for _ in range(2)]
    params = [adjacency]
    for conv, rec in modules:
        params.extend([conv.weight, rec.embed_fwd, rec.embed_bwd,
                       rec.project_fwd, rec.project_bwd, rec.bias])
    probe = rng.normal(size=(n, dim))
    return params, lambda t: _linear_probe(
        t, stacked_forward(t, features, adjacency, modules), probe
    )


def _encoder_case(seed: int):
    rng = np.random.default_rng(seed)
    enc = init_encoder(4, 4, 4, rng, channels=(2, 3))
    image = rng.uniform(0.0, 1.0, (1, 4, 4))
    params = [enc.kernel1, enc.bias1, enc.kernel2, enc.bias2, enc.projection, enc.proj_bias]
    probe = rng.normal(size=(1, 4))
    return params, lambda t: _linear_probe(t, encode_sequence(t, image, enc), probe)


def check_modules(seed: int = 0, tolerance: float = TOLERANCE) -> list[CheckResult]:
    results = []
    for name, case in (
        ("encoder (one 4x4 frame)", _encoder_case),
        ("graph module (N=3, d=4)", _graph_module_case),
        ("two-module stack (N=3, d=4)", _stack_case),
    ):
        params, run = case(seed)
        worst = fd_check(params, run)
        results.append(CheckResult(name, worst, worst < tolerance))
    return results


def _tiny_model(seed: int = 0):
    cfg = ModelConfig(
        n_frames=3,
        frame_rows=4,
        frame_cols=4,
        n_classes=2,
        feature_dim=4,
        module_count=2,
        use_weighted_fusion=True,
        conv_channels=(2, 3),
    )
    model = init_model(cfg, seed)
    rng = np.random.default_rng(seed + 1)
    model.adjacency.values += rng.normal(0, 0.2, model.adjacency.values.shape)
    images = rng.uniform(0.0, 1.0, (3, 4, 4))
    return model, images


def check_end_to_end(seed: int = 0, tolerance: float = TOLERANCE) -> list[CheckResult]:
    """Full model (N=3, d=4, K=2, 4x4 frames) against finite differences,
    per named parameter group, the adjacency matrix included.

    The finite-difference evaluations hold the fusion weights at their
    unperturbed values: the model defines its adjacency gradient through
    the detached weight branch, so that is the function being
    differentiated.  Weights depend on nothing but the adjacency matrix,
    so this changes nothing for the other parameters.
    """
    model, images = _tiny_model(seed)
    label = 1

    tape = Tape()
    trace = model_forward(tape, images, model)
    loss = tape.cross_entropy(trace.logits, label)
    named = model.named_parameters()
    params = [t for _, t in named]
    backward(tape, loss, params)
    analytic = {name: t.grad.copy() for name, t in named}
    for t in params:
        t.grad = None

    frozen_weights = current_intensity_weights(model)

    results = []
    for name, tensor in named:
        def evaluate(arr: np.ndarray, tensor=tensor) -> float:
            saved = tensor.values
            tensor.values = arr
            try:
                t = Tape(record=False)
                tr = model_forward(t, images, model, fixed_weights=frozen_weights)
                return t.cross_entropy(tr.logits, label).item()
            finally:
                tensor.values = saved

        numeric = numeric_gradient(evaluate, tensor.values)
        worst = max_relative_error(analytic[name], numeric)
        results.append(CheckResult(f"end-to-end grad {name}", worst, worst < tolerance))
    return results


def check_stop_gradient(seed: int = 0, tolerance: float = TOLERANCE) -> list[CheckResult]:
    """Two contracts: a loss reaching the adjacency matrix only through the
    fusion weights yields an exactly-zero adjacency gradient, and the full
    model's adjacency gradient matches finite differences taken with the
    fusion weights frozen at their current values."""
    results = []

    rng = np.random.default_rng(seed)
    n = 4
    adjacency = identity_adjacency(n)
    adjacency.values += rng.normal(0, 0.3, (n, n))
    probe = rng.normal(size=(1, n))
    tape = Tape()
    loss = _linear_probe(tape, intensity_weights(tape, adjacency), probe)
    backward(tape, loss, [adjacency])
    zero_grad = float(np.abs(adjacency.grad).max(initial=0.0))
    adjacency.grad = None
    results.append(
        CheckResult(
            "fusion-branch-only adjacency gradient",
            zero_grad,
            zero_grad == 0.0,
            note="must be exactly zero",
        )
    )

    model, images = _tiny_model(seed)
    label = 0
    tape = Tape()
    trace = model_forward(tape, images, model)
    loss = tape.cross_entropy(trace.logits, label)
    backward(tape, loss, [model.adjacency])
    analytic = model.adjacency.grad.copy()
    model.adjacency.grad = None

    frozen_weights = current_intensity_weights(model)

    def evaluate(arr: np.ndarray) -> float:
        saved = model.adjacency.values
        model.adjacency.values = arr
        try:
            t = Tape(record=False)
            tr = model_forward(t, images, model, fixed_weights=frozen_weights)
            return t.cross_entropy(tr.logits, label).item()
        finally:
            model.adjacency.values = saved

    numeric = numeric_gradient(evaluate, model.adjacency.values)
    worst = max_relative_error(analytic, numeric)
    results.append(
        CheckResult(
            "full-model adjacency gradient vs frozen-fusion finite differences",
            worst,
            worst < tolerance,
        )
    )
    return results


SCOPES = ("ops", "module", "end_to_end", "stop_gradient", "all")


def run_gradcheck(scope: str = "all", seed: int = 0) -> GradcheckReport:
    if scope not in SCOPES:
        raise ConfigError(f"scope must be one of {SCOPES}, got '{scope}'")
    report = GradcheckReport(scope)
    if scope in ("ops", "all"):
        report.results.extend(check_ops(seed=seed))
    if scope in ("module", "all"):
        report.results.extend(check_modules(seed=seed))
    if scope in ("end_to_end", "all"):
        report.results.extend(check_end_to_end(seed=seed))
    if scope in ("stop_gradient", "all"):
        report.results.extend(check_stop_gradient(seed=seed))
    return report
