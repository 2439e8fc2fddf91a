"""Graph layer over frame nodes plus a bidirectional recurrent layer.

Frames of a video are nodes of a fully connected graph whose edge strengths
live in one learnable N x N adjacency matrix.  Each node mixes the
linearly embedded features of all frames, weighted by its adjacency row,
through a leaky-ReLU.  A gateless bidirectional recurrent layer then models
temporal variation.  Several such modules can be stacked; they all share
the single adjacency matrix, whose gradient accumulates across modules.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor, constant, parameter
from .errors import ConfigError, DegenerateGraphError, ShapeError

__all__ = [
    "GraphConvParams",
    "BiRecurrentParams",
    "identity_adjacency",
    "init_graph_conv",
    "init_birecurrent",
    "neighbor_stack",
    "message_embed",
    "node_update",
    "gcn_forward",
    "birnn_forward",
    "graph_module_forward",
    "stacked_forward",
    "glorot",
]


def glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


@dataclass
class GraphConvParams:
    """Learnable d x d embedding for neighbour messages, plus the slope."""

    weight: Tensor
    slope: float = 0.2


@dataclass
class BiRecurrentParams:
    """Parameters of the gateless bidirectional recurrent layer.

    ``embed_*`` maps the concatenation [state, input] (1 x 2d) to the half
    dimension; ``project_*`` maps it back to d.  The projected vector is
    both the next hidden state and one summand of the output.  Initial
    states are fixed zeros, not learned.
    """

    embed_fwd: Tensor  # (d/2) x 2d
    embed_bwd: Tensor
    project_fwd: Tensor  # d x (d/2)
    project_bwd: Tensor
    bias: Tensor  # 1 x d
    init_fwd: Tensor  # 1 x d, zeros
    init_bwd: Tensor


def identity_adjacency(n_frames: int) -> Tensor:
    """The learnable adjacency matrix starts as the identity: every frame
    depends only on itself until training couples the frames."""
    return parameter(np.eye(n_frames))


def init_graph_conv(
    dim: int, rng: np.random.Generator, slope: float = 0.2, gain: float = 2.0
) -> GraphConvParams:
    # gain > 1 compensates the signal the sigmoid of the recurrent cell
    # swallows downstream; plain Glorot stacks attenuate sample-to-sample
    # variation below what SGD can pick up.
    return GraphConvParams(weight=parameter(gain * glorot(rng, dim, dim)), slope=slope)


def init_birecurrent(
    dim: int, rng: np.random.Generator, project_gain: float = 6.0
) -> BiRecurrentParams:
    if dim % 2:
        raise ConfigError(f"recurrent layer needs an even feature dimension, got {dim}")
    half = dim // 2
    project_fwd = project_gain * glorot(rng, dim, half)
    project_bwd = project_gain * glorot(rng, dim, half)
    # The sigmoid outputs sit around 0.5, so the projections add a large
    # input-independent offset that would park the tanh in its flat
    # region.  Start the bias at minus that expected offset; it stays
    # learnable.
    bias = -0.5 * (project_fwd.sum(axis=1) + project_bwd.sum(axis=1))
    return BiRecurrentParams(
        embed_fwd=parameter(glorot(rng, half, 2 * dim)),
        embed_bwd=parameter(glorot(rng, half, 2 * dim)),
        project_fwd=parameter(project_fwd),
        project_bwd=parameter(project_bwd),
        bias=parameter(bias.reshape(1, dim)),
        init_fwd=constant(np.zeros((1, dim))),
        init_bwd=constant(np.zeros((1, dim))),
    )


def neighbor_stack(tape: Tape, features: Tensor, index: int) -> Tensor:
    """Rows of ``features`` excluding row ``index``, original order kept."""
    n = features.values.shape[0]
    if n < 2:
        raise DegenerateGraphError("a single-node graph has no neighbours")
    if not 0 <= index < n:
        raise IndexError(f"node index {index} out of range for {n} nodes")
    others = [j for j in range(n) if j != index]
    return tape.select_rows(features, others)


def message_embed(tape: Tape, neighbors: Tensor, params: GraphConvParams) -> Tensor:
    """Embed stacked neighbour features with the module's weight matrix."""
    return tape.matmul(neighbors, params.weight)


def node_update(
    tape: Tape, features: Tensor, adjacency: Tensor, params: GraphConvParams, index: int
) -> Tensor:
    """Update one node: adjacency-weighted neighbour messages plus the
    self term, through the leaky-ReLU.  For a single-node graph only the
    self term exists."""
    n = features.values.shape[0]
    if adjacency.values.shape != (n, n):
        raise ShapeError(
            f"adjacency must be ({n}, {n}) for {n} frames, got {adjacency.values.shape}"
        )
    if not 0 <= index < n:
        raise IndexError(f"node index {index} out of range for {n} nodes")
    row = tape.select_rows(adjacency, [index])
    self_embed = tape.matmul(tape.select_rows(features, [index]), params.weight)
    self_term = tape.matmul(tape.select_cols(row, [index]), self_embed)
    if n == 1:
        pre = self_term
    else:
        messages = message_embed(tape, neighbor_stack(tape, features, index), params)
        others = [j for j in range(n) if j != index]
        neighbor_term = tape.matmul(tape.select_cols(row, others), messages)
        pre = tape.add(neighbor_term, self_term)
    return tape.leaky_relu(pre, params.slope)


def gcn_forward(
    tape: Tape, features: Tensor, adjacency: Tensor, params: GraphConvParams
) -> Tensor:
    """All node updates at once: leaky_relu(adjacency @ features @ weight).

    Row i equals node_update(features, adjacency, params, i); the
    full-matrix form fixes one summation order for every row and differs
    from the per-node composition only by float reassociation.
    """
    n = features.values.shape[0]
    if adjacency.values.shape != (n, n):
        raise ShapeError(
            f"adjacency must be ({n}, {n}) for {n} frames, got {adjacency.values.shape}"
        )
    embedded = tape.matmul(features, params.weight)
    return tape.leaky_relu(tape.matmul(adjacency, embedded), params.slope)


def birnn_forward(tape: Tape, features: Tensor, params: BiRecurrentParams) -> Tensor:
    """Bidirectional recurrent pass over the frame axis.

    The forward direction visits frames first to last, the backward
    direction last to first; each step embeds [state, frame] through a
    sigmoid and projects back to d, and the output row is
    tanh(state_fwd + state_bwd + bias).
    """
    n, dim = features.values.shape
    if dim % 2:
        raise ConfigError(f"recurrent layer needs an even feature dimension, got {dim}")
    if params.embed_fwd.values.shape != (dim // 2, 2 * dim):
        raise ShapeError(
            f"embed matrices must be ({dim // 2}, {2 * dim}), "
            f"got {params.embed_fwd.values.shape}"
        )
    embed_fwd_t = tape.transpose(params.embed_fwd)
    embed_bwd_t = tape.transpose(params.embed_bwd)
    project_fwd_t = tape.transpose(params.project_fwd)
    project_bwd_t = tape.transpose(params.project_bwd)
    rows = [tape.select_rows(features, [i]) for i in range(n)]

    fwd_states = []
    state = params.init_fwd
    for i in range(n):
        hidden = tape.sigmoid(tape.matmul(tape.concat_cols([state, rows[i]]), embed_fwd_t))
        state = tape.matmul(hidden, project_fwd_t)
        fwd_states.append(state)

    bwd_states: list[Tensor | None] = [None] * n
    state = params.init_bwd
    for i in reversed(range(n)):
        hidden = tape.sigmoid(tape.matmul(tape.concat_cols([state, rows[i]]), embed_bwd_t))
        state = tape.matmul(hidden, project_bwd_t)
        bwd_states[i] = state

    outputs = [
        tape.tanh(tape.add(tape.add(fwd_states[i], bwd_states[i]), params.bias))
        for i in range(n)
    ]
    return tape.stack_rows(outputs)


def graph_module_forward(
    tape: Tape,
    features: Tensor,
    adjacency: Tensor,
    conv: GraphConvParams,
    recurrent: BiRecurrentParams,
) -> Tensor:
    """One full module: graph convolution, then the bidirectional layer."""
    return birnn_forward(tape, gcn_forward(tape, features, adjacency, conv), recurrent)


def stacked_forward(
    tape: Tape,
    features: Tensor,
    adjacency: Tensor,
    modules: list[tuple[GraphConvParams, BiRecurrentParams]],
) -> Tensor:
    """Sequential stack of modules, all sharing one adjacency matrix.

    The adjacency gradient accumulates one contribution per module.
    """
    dim = features.values.shape[1]
    for conv, _ in modules:
        if conv.weight.values.shape != (dim, dim):
            raise ConfigError(
                f"stacked modules must share dimension {dim}, "
                f"got a weight of shape {conv.weight.values.shape}"
            )
    out = features
    for conv, recurrent in modules:
        out = graph_module_forward(tape, out, adjacency, conv, recurrent)
    return out
