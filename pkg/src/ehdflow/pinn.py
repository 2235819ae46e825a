"""Feed-forward network engine trained on the conduit-flow physics loss.

The network maps the radius tau to a velocity estimate v(tau).  Training
minimizes a composite loss: the mean squared strong-form residual over a
collocation grid (the differential cost) plus squared boundary violations
(v'(0))^2 and (v(1))^2.  Derivatives in tau come from second-order jets;
parameter gradients come from the reverse-mode tape; updates use Adamax.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Jet2, NonFiniteLossError
from .model import ModelParams, PoleError, SolutionTable, Source, ode_residual

# loss recorded every this many epochs (plus the final epoch)
RECORD_STRIDE = 100
# totals beyond this mark the run as diverged
DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture and training hyperparameters.

    Defaults are the tuned optimum: 100 collocation points, two hidden
    layers of 16 sigmoid neurons, Adamax with learning rate 0.001 for
    25000 epochs.
    """

    n_points: int = 100
    hidden_layers: int = 2
    neurons_per_layer: int = 16
    activation: str = "sigmoid"
    learning_rate: float = 0.001
    epochs: int = 25000
    seed: int = 0
    adamax_beta1: float = 0.9
    adamax_beta2: float = 0.999
    adamax_epsilon: float = 1e-7

    def __post_init__(self):
        if self.n_points < 2:
            raise ValueError("n_points must be at least 2")
        if self.hidden_layers < 1 or self.neurons_per_layer < 1:
            raise ValueError("network needs at least one hidden layer and neuron")
        if self.activation not in ad.ACTIVATION_KINDS:
            raise ValueError(
                f"unknown activation {self.activation!r}; "
                f"supported: {', '.join(ad.ACTIVATION_KINDS)}"
            )
        if not self.learning_rate > 0.0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        if not (0.0 < self.adamax_beta1 < 1.0 and 0.0 < self.adamax_beta2 < 1.0):
            raise ValueError("adamax betas must lie in (0, 1)")
        if not self.adamax_epsilon > 0.0:
            raise ValueError("adamax_epsilon must be positive")


def glorot_normal_init(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    """Weight matrix (fan_out, fan_in) from a truncated normal draw.

    Entries ~ N(0, 2/(fan_in+fan_out)); draws beyond two standard
    deviations are resampled.
    """
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fan_in and fan_out must be positive")
    stddev = math.sqrt(2.0 / (fan_in + fan_out))
    w = rng.normal(0.0, stddev, size=(fan_out, fan_in))
    while True:
        out_of_band = np.abs(w) > 2.0 * stddev
        count = int(out_of_band.sum())
        if count == 0:
            return w
        w[out_of_band] = rng.normal(0.0, stddev, size=count)


@dataclass
class Network:
    """Dense 1 -> k -> ... -> k -> 1 network: weights, biases, activation."""

    layers: list[tuple[np.ndarray, np.ndarray]]
    activation: str

    @classmethod
    def initialize(cls, cfg: NetworkConfig, rng: np.random.Generator) -> "Network":
        dims = [1] + [cfg.neurons_per_layer] * cfg.hidden_layers + [1]
        layers = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w = glorot_normal_init(fan_in, fan_out, rng)
            layers.append((w, np.zeros(fan_out)))
        return cls(layers=layers, activation=cfg.activation)

    @property
    def architecture(self) -> tuple[int, ...]:
        return (self.layers[0][0].shape[1],) + tuple(w.shape[0] for w, _ in self.layers)

    @property
    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)

    def flat_parameters(self) -> np.ndarray:
        """Canonical flat layout: per layer, weights (row-major) then bias."""
        return np.concatenate([a.ravel() for w, b in self.layers for a in (w, b)])

    def with_parameters(self, flat: np.ndarray) -> "Network":
        layers = []
        offset = 0
        for w, b in self.layers:
            new_w = flat[offset : offset + w.size].reshape(w.shape)
            offset += w.size
            new_b = flat[offset : offset + b.size]
            offset += b.size
            layers.append((new_w, new_b))
        if offset != flat.size:
            raise ValueError("flat parameter vector has the wrong length")
        return Network(layers=layers, activation=self.activation)


def collocation_grid(n_points: int) -> np.ndarray:
    """Uniform grid tau_i = i/n on (0, 1].

    tau = 0 is excluded (the v'/tau term is singular there); the axis
    condition enters through the explicit boundary penalty instead.
    """
    if n_points < 2:
        raise ValueError("n_points must be at least 2")
    return np.arange(1, n_points + 1) / n_points


def _affine(x, w, b):
    return ad.matmul(x, ad.transpose(w)) + b


def _affine_nobias(x, w):
    return ad.matmul(x, ad.transpose(w))


def _forward_layers(layers, activation: str, tau_col: np.ndarray) -> Jet2:
    """Push the lifted input through all layers; output layer stays linear."""
    jet = ad.jet_variable(tau_col)
    *hidden, (w_out, b_out) = layers
    for w, b in hidden:
        z = Jet2(
            _affine(jet.val, w, b),
            _affine_nobias(jet.d1, w),
            _affine_nobias(jet.d2, w),
        )
        jet = ad.jet_activate(activation, z)
    return Jet2(
        _affine(jet.val, w_out, b_out),
        _affine_nobias(jet.d1, w_out),
        _affine_nobias(jet.d2, w_out),
    )


def forward_jet(net: Network, tau: float) -> Jet2:
    """Network value and its first two tau-derivatives at a single radius."""
    out = _forward_layers(net.layers, net.activation, np.array([[float(tau)]]))
    return Jet2(float(out.val[0, 0]), float(out.d1[0, 0]), float(out.d2[0, 0]))


def forward_value(net: Network, taus: np.ndarray) -> np.ndarray:
    """Plain network evaluation at many radii (no derivative channels)."""
    x = np.asarray(taus, dtype=float).reshape(-1, 1)
    *hidden, (w_out, b_out) = net.layers
    for w, b in hidden:
        x = ad.activation_value(net.activation, x @ w.T + b)
    return (x @ w_out.T + b_out).ravel()


@dataclass(frozen=True)
class LossBreakdown:
    """Composite physics loss and its three components."""

    differential_cost: float
    boundary_neumann: float
    boundary_dirichlet: float
    total: float

    @classmethod
    def from_components(cls, diff, neumann, dirichlet) -> "LossBreakdown":
        diff, neumann, dirichlet = float(diff), float(neumann), float(dirichlet)
        return cls(diff, neumann, dirichlet, diff + neumann + dirichlet)


def _loss_terms(layers, activation: str, grid: np.ndarray, params: ModelParams):
    """Differential + boundary loss terms; backend-generic.

    Returns (total, differential, neumann, dirichlet) in whatever numeric
    type the layer parameters carry (ndarray or tape value).
    """
    # rows: [tau=0 for the axis slope | collocation grid | tau=1 for the wall]
    taus = np.concatenate([[0.0], grid, [1.0]]).reshape(-1, 1)
    out = _forward_layers(layers, activation, taus)
    tau_col = taus[1:-1, :]
    residual = ode_residual(
        tau_col, out.val[1:-1, :], out.d1[1:-1, :], out.d2[1:-1, :], params
    )
    differential = ad.asum(residual * residual) * (1.0 / grid.size)
    neumann_slope = out.d1[0, 0]
    wall_value = out.val[-1, 0]
    neumann = neumann_slope * neumann_slope
    dirichlet = wall_value * wall_value
    total = differential + neumann + dirichlet
    return total, differential, neumann, dirichlet


def _check_grid(grid: np.ndarray) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0 or np.any(grid <= 0.0) or np.any(grid > 1.0):
        raise ValueError("collocation grid must lie in (0, 1]")
    return grid


def physics_loss(net: Network, grid: np.ndarray, params: ModelParams) -> LossBreakdown:
    """Composite loss of a network state on a collocation grid."""
    grid = _check_grid(grid)
    total, diff, neumann, dirichlet = _loss_terms(net.layers, net.activation, grid, params)
    if not np.isfinite(float(total)):
        raise NonFiniteLossError(f"physics loss evaluated to {float(total)}")
    return LossBreakdown.from_components(diff, neumann, dirichlet)


def physics_loss_gradient(
    net: Network, grid: np.ndarray, params: ModelParams
) -> tuple[LossBreakdown, np.ndarray]:
    """Loss breakdown plus its exact gradient in the canonical flat layout."""
    grid = _check_grid(grid)
    arrays = [a for w, b in net.layers for a in (w, b)]
    parts: dict[str, float] = {}

    def loss_fn(leaves):
        layers = [(leaves[i], leaves[i + 1]) for i in range(0, len(leaves), 2)]
        total, diff, neumann, dirichlet = _loss_terms(layers, net.activation, grid, params)
        parts["diff"] = float(ad.raw(diff))
        parts["neumann"] = float(ad.raw(neumann))
        parts["dirichlet"] = float(ad.raw(dirichlet))
        return total

    record = ad.loss_gradient(loss_fn, arrays)
    breakdown = LossBreakdown.from_components(
        parts["diff"], parts["neumann"], parts["dirichlet"]
    )
    return breakdown, record.gradient


class Adamax:
    """Adam variant with an infinity-norm second moment.

    Per step t:  m <- b1*m + (1-b1)*g;  u <- max(b2*u, |g|);
    theta <- theta - (lr / (1 - b1^t)) * m / (u + eps).
    """

    def __init__(self, cfg: NetworkConfig, size: int):
        self.lr = cfg.learning_rate
        self.beta1 = cfg.adamax_beta1
        self.beta2 = cfg.adamax_beta2
        self.epsilon = cfg.adamax_epsilon
        self.m = np.zeros(size)
        self.u = np.zeros(size)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.u = np.maximum(self.beta2 * self.u, np.abs(grad))
        scale = self.lr / (1.0 - self.beta1**self.t)
        return theta - scale * self.m / (self.u + self.epsilon)


@dataclass
class TrainingTrace:
    """Strided loss records, final network, divergence flag and timing."""

    records: list[tuple[int, LossBreakdown]]
    network: Network
    seconds: float
    diverged: bool = False
    divergence_reason: str | None = None
    config: NetworkConfig | None = None

    @property
    def final_loss(self) -> LossBreakdown:
        return self.records[-1][1]


def train(cfg: NetworkConfig, params: ModelParams = ModelParams()) -> TrainingTrace:
    """Full-batch Adamax training; deterministic for a given seed.

    Unstable configurations (expected for some activations) terminate
    cleanly: a non-finite loss, a reaction-pole hit or a total beyond
    DIVERGENCE_LIMIT stops training and marks the trace diverged.
    """
    rng = np.random.default_rng(cfg.seed)
    net = Network.initialize(cfg, rng)
    grid = collocation_grid(cfg.n_points)
    theta = net.flat_parameters()
    optimizer = Adamax(cfg, theta.size)
    records: list[tuple[int, LossBreakdown]] = []
    diverged = False
    reason = None
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        try:
            breakdown, grad = physics_loss_gradient(net, grid, params)
        except (PoleError, NonFiniteLossError) as err:
            diverged, reason = True, str(err)
            break
        if epoch % RECORD_STRIDE == 0:
            records.append((epoch, breakdown))
        if breakdown.total > DIVERGENCE_LIMIT:
            diverged = True
            reason = f"total loss {breakdown.total:.3e} exceeded {DIVERGENCE_LIMIT:.0e}"
            break
        theta = optimizer.step(theta, grad)
        net = net.with_parameters(theta)
    if not diverged:
        try:
            records.append((cfg.epochs, physics_loss(net, grid, params)))
        except (PoleError, NonFiniteLossError) as err:
            diverged, reason = True, str(err)
    seconds = time.perf_counter() - start
    return TrainingTrace(
        records=records,
        network=net,
        seconds=seconds,
        diverged=diverged,
        divergence_reason=reason,
        config=cfg,
    )


def evaluate(net: Network, grid: np.ndarray) -> SolutionTable:
    """Sample the trained network on a tau grid."""
    taus = np.asarray(grid, dtype=float)
    return SolutionTable(taus, forward_value(net, taus), Source.PINN)
