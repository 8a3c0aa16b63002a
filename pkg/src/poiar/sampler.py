"""
No-U-Turn sampler.

Multinomial NUTS with a diagonal metric: trajectories are doubled in a random
direction until the generalized U-turn criterion (with the extra checks across
neighbouring subtrees) fires, the tree depth limit is reached or a transition
diverges. States are selected from the trajectory in proportion to
``exp(-H)``, progressively biased towards the newest subtree.

During warmup the step size is tuned by dual averaging towards
``target_accept`` and the diagonal metric is estimated from the draws of
doubling windows, as in Stan. Chains run in a thread pool, each on its own
random stream.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from poiar.config import NutsConfig
from poiar.errors import InitializationError, NumericDomainError
from poiar.streams import NUTS_CHAIN, make_rng
from poiar.target import Target

logger = logging.getLogger(__name__)

# Stan's windowed adaptation buffers
INIT_BUFFER = 75
BASE_WINDOW = 25
TERM_BUFFER = 50
MIN_ADAPT_WARMUP = 20


class State(NamedTuple):
    """Phase-space point with cached density and gradient."""

    z: np.ndarray
    momentum: np.ndarray
    lp: float
    grad: np.ndarray


def leapfrog(
    z: np.ndarray,
    momentum: np.ndarray,
    step: float,
    target: Target,
    grad: Optional[np.ndarray] = None,
    inv_metric: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray, float, np.ndarray]:
    """
    One velocity-Verlet step.

    Args:
        z: Position
        momentum: Momentum
        step: Step size; a negative step integrates backwards
        target: Log density and gradient
        grad: Gradient at ``z``; evaluated when omitted
        inv_metric: Diagonal inverse metric; identity when omitted

    Returns:
        ``(z', momentum', lp', grad')``
    """
    if grad is None:
        _, grad = target.log_density_grad(z)
    if inv_metric is None:
        inv_metric = np.ones_like(z)
    momentum = momentum + 0.5 * step * grad
    z = z + step * inv_metric * momentum
    lp, grad = target.log_density_grad(z)
    momentum = momentum + 0.5 * step * grad
    return z, momentum, lp, grad


def hamiltonian(state: State, inv_metric: np.ndarray) -> float:
    """Potential plus kinetic energy; ``inf`` when the density is not finite."""
    h = -state.lp + 0.5 * float(np.sum(inv_metric * state.momentum**2))
    return np.inf if np.isnan(h) else h


def _step(state: State, step: float, target: Target, inv_metric: np.ndarray) -> State:
    z, momentum, lp, grad = leapfrog(
        state.z, state.momentum, step, target, state.grad, inv_metric
    )
    return State(z, momentum, lp, grad)


@dataclass
class _SubTree:
    negative: State
    positive: State
    sum_mom: np.ndarray
    log_weight: float
    depth: int


@dataclass
class _TransitionStats:
    n_leapfrog: int = 0
    sum_accept_prob: float = 0.0
    divergent: bool = False


class Transition(NamedTuple):
    """Outcome of one NUTS iteration."""

    state: State
    accept_stat: float
    tree_depth: int
    n_leapfrog: int
    divergent: bool


def _u_turn(state_1: State, state_2: State, sum_mom: np.ndarray, inv_metric) -> bool:
    """Generalized criterion: True when the trajectory turns back on itself."""
    return (
        np.dot(inv_metric * state_1.momentum, sum_mom) <= 0
        or np.dot(inv_metric * state_2.momentum, sum_mom) <= 0
    )


def _merge(negative: _SubTree, positive: _SubTree) -> _SubTree:
    return _SubTree(
        negative=negative.negative,
        positive=positive.positive,
        sum_mom=negative.sum_mom + positive.sum_mom,
        log_weight=np.logaddexp(negative.log_weight, positive.log_weight),
        depth=negative.depth + 1,
    )


def _terminates(
    tree: _SubTree, negative: _SubTree, positive: _SubTree, inv_metric
) -> bool:
    if _u_turn(tree.negative, tree.positive, tree.sum_mom, inv_metric):
        return True
    if tree.depth > 1:
        if _u_turn(
            negative.negative,
            positive.negative,
            negative.sum_mom + positive.negative.momentum,
            inv_metric,
        ):
            return True
        if _u_turn(
            negative.positive,
            positive.positive,
            positive.sum_mom + negative.positive.momentum,
            inv_metric,
        ):
            return True
    return False


class _TreeBuilder:
    def __init__(self, target, step, inv_metric, h0, max_energy_error, rng):
        self.target = target
        self.step = step
        self.inv_metric = inv_metric
        self.h0 = h0
        self.max_energy_error = max_energy_error
        self.rng = rng
        self.stats = _TransitionStats()

    def build(
        self, depth: int, state: State, direction: int
    ) -> tuple[bool, Optional[_SubTree], Optional[State]]:
        """``(terminate, subtree, proposal)`` of a subtree of ``2**depth`` steps."""
        if depth == 0:
            state = _step(state, direction * self.step, self.target, self.inv_metric)
            h = hamiltonian(state, self.inv_metric)
            self.stats.n_leapfrog += 1
            self.stats.sum_accept_prob += min(1.0, float(np.exp(self.h0 - h)))
            if h - self.h0 > self.max_energy_error:
                self.stats.divergent = True
                return True, None, None
            tree = _SubTree(state, state, state.momentum.copy(), self.h0 - h, 0)
            return False, tree, state

        terminate, inner, inner_proposal = self.build(depth - 1, state, direction)
        if terminate:
            return True, None, None
        edge = inner.positive if direction == 1 else inner.negative
        terminate, outer, outer_proposal = self.build(depth - 1, edge, direction)
        if terminate:
            return True, None, None

        negative, positive = (inner, outer) if direction == 1 else (outer, inner)
        tree = _merge(negative, positive)
        accept_outer = np.exp(outer.log_weight - tree.log_weight)
        if self.rng.uniform() < accept_outer:
            proposal = outer_proposal
        else:
            proposal = inner_proposal
        return _terminates(tree, negative, positive, self.inv_metric), tree, proposal


def nuts_transition(
    state: State,
    step: float,
    inv_metric: np.ndarray,
    target: Target,
    rng: np.random.Generator,
    max_treedepth: int = 10,
    max_energy_error: float = 1000.0,
) -> Transition:
    """
    One multinomial NUTS iteration from ``state`` (its momentum is ignored).

    Returns:
        The selected state and the iteration statistics
    """
    momentum = rng.standard_normal(len(state.z)) / np.sqrt(inv_metric)
    start = state._replace(momentum=momentum)
    h0 = hamiltonian(start, inv_metric)
    builder = _TreeBuilder(target, step, inv_metric, h0, max_energy_error, rng)

    tree = _SubTree(start, start, momentum.copy(), 0.0, 0)
    selected = start
    n_doublings = 0
    for depth in range(max_treedepth):
        direction = 1 if rng.uniform() < 0.5 else -1
        edge = tree.positive if direction == 1 else tree.negative
        terminate, new_tree, proposal = builder.build(depth, edge, direction)
        if terminate:
            break
        n_doublings += 1
        if rng.uniform() < np.exp(new_tree.log_weight - tree.log_weight):
            selected = proposal
        negative, positive = (tree, new_tree) if direction == 1 else (new_tree, tree)
        tree = _merge(negative, positive)
        if _terminates(tree, negative, positive, inv_metric):
            break

    stats = builder.stats
    accept_stat = stats.sum_accept_prob / max(stats.n_leapfrog, 1)
    return Transition(
        state=selected,
        accept_stat=accept_stat,
        tree_depth=n_doublings,
        n_leapfrog=stats.n_leapfrog,
        divergent=stats.divergent,
    )


def find_reasonable_step_size(
    state: State,
    target: Target,
    inv_metric: np.ndarray,
    rng: np.random.Generator,
    step: float = 1.0,
    max_tries: int = 100,
) -> float:
    """
    Double or halve ``step`` until one leapfrog step crosses acceptance 0.5.

    Raises:
        NumericDomainError: If no finite step size is found
    """

    def log_accept(eps):
        start = state._replace(
            momentum=rng.standard_normal(len(state.z)) / np.sqrt(inv_metric)
        )
        h0 = hamiltonian(start, inv_metric)
        h = hamiltonian(_step(start, eps, target, inv_metric), inv_metric)
        return h0 - h

    log_half = np.log(0.5)
    direction = 1 if log_accept(step) > log_half else -1
    for _ in range(max_tries):
        step *= 2.0**direction
        above = log_accept(step) > log_half
        if (direction == 1 and not above) or (direction == -1 and above):
            break
        if not 1e-10 < step < 1e7:
            raise NumericDomainError(f"No reasonable step size found (reached {step})")
    return step


class DualAveraging:
    """
    Nesterov dual averaging of ``log(step)`` towards a target acceptance.

    Args:
        step: Initial step size; the shrinkage point is ``log(10 * step)``
        target_accept: Target mean acceptance statistic
    """

    def __init__(
        self,
        step: float,
        target_accept: float = 0.8,
        gamma: float = 0.05,
        t0: float = 10.0,
        kappa: float = 0.75,
    ):
        self.target_accept = target_accept
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.restart(step)

    def restart(self, step: float) -> None:
        self.mu = np.log(10.0 * step)
        self.counter = 0
        self.h_bar = 0.0
        self.log_step_bar = 0.0

    def update(self, accept_stat: float) -> float:
        """Feed one acceptance statistic and return the next step size."""
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target_accept - accept_stat)
        log_step = self.mu - self.h_bar * np.sqrt(self.counter) / self.gamma
        weight = self.counter ** (-self.kappa)
        self.log_step_bar = weight * log_step + (1.0 - weight) * self.log_step_bar
        return float(np.exp(log_step))

    @property
    def final_step(self) -> float:
        return float(np.exp(self.log_step_bar))


class WindowedAdapter:
    """
    Diagonal metric estimation over doubling windows.

    Warmup is split into an initial buffer (75 iterations), doubling windows
    starting at 25 iterations and a terminal buffer (50 iterations). Below
    150 warmup iterations the split is 15% / 75% / 10%; below 20 the metric
    is not adapted.
    """

    def __init__(self, n_warmup: int, dim: int):
        self.n_warmup = n_warmup
        self.dim = dim
        self.enabled = n_warmup >= MIN_ADAPT_WARMUP
        if INIT_BUFFER + BASE_WINDOW + TERM_BUFFER > n_warmup:
            self.init_buffer = int(0.15 * n_warmup)
            self.term_buffer = int(0.1 * n_warmup)
            self.base_window = n_warmup - (self.init_buffer + self.term_buffer)
        else:
            self.init_buffer = INIT_BUFFER
            self.term_buffer = TERM_BUFFER
            self.base_window = BASE_WINDOW
        self.counter = 0
        self.window_size = self.base_window
        self.next_window_end = self.init_buffer + self.base_window - 1
        self._reset_estimator()

    def _reset_estimator(self) -> None:
        self.n = 0
        self.mean = np.zeros(self.dim)
        self.m2 = np.zeros(self.dim)

    @property
    def _last_window_end(self) -> int:
        return self.n_warmup - self.term_buffer - 1

    def _in_window(self) -> bool:
        return (
            self.init_buffer <= self.counter < self.n_warmup - self.term_buffer
        )

    def _compute_next_window(self) -> None:
        if self.next_window_end == self._last_window_end:
            return
        self.window_size *= 2
        self.next_window_end = self.counter + self.window_size
        if self.next_window_end != self._last_window_end:
            if self.next_window_end + 2 * self.window_size >= self._last_window_end + 1:
                self.next_window_end = self._last_window_end

    def learn(self, z: np.ndarray) -> Optional[np.ndarray]:
        """
        Record one warmup position.

        Returns:
            The new inverse metric when a window closes, otherwise None
        """
        if not self.enabled:
            self.counter += 1
            return None
        if self._in_window():
            self.n += 1
            delta = z - self.mean
            self.mean = self.mean + delta / self.n
            self.m2 = self.m2 + delta * (z - self.mean)
        if self.counter == self.next_window_end and self.counter != self.n_warmup:
            self._compute_next_window()
            n = self.n
            variance = self.m2 / max(n - 1, 1)
            inv_metric = (n / (n + 5.0)) * variance + 1e-3 * (5.0 / (n + 5.0))
            self._reset_estimator()
            self.counter += 1
            return inv_metric
        self.counter += 1
        return None


@dataclass
class WarmupResult:
    """
    Adapted sampler settings at the end of warmup.

    Attributes:
        state: Last warmup state
        step_size: Final dual-averaged step size
        inv_metric: Diagonal inverse metric (marginal variance estimates)
        accept_trace: Acceptance statistic of every warmup iteration
        tail_accept: Mean acceptance statistic since the last step-size restart
    """

    state: State
    step_size: float
    inv_metric: np.ndarray
    accept_trace: np.ndarray
    tail_accept: float


def adapt_warmup(
    target: Target,
    state: State,
    config: NutsConfig,
    rng: np.random.Generator,
) -> WarmupResult:
    """
    Run the warmup phase of one chain.

    Args:
        target: Log density and gradient
        state: Initial state with finite density
        config: Sampler settings
        rng: Chain stream

    Returns:
        The adapted step size and metric with the last warmup state
    """
    inv_metric = np.ones(target.dim)
    step = find_reasonable_step_size(state, target, inv_metric, rng)
    dual = DualAveraging(step, config.target_accept)
    windows = WindowedAdapter(config.n_warmup, target.dim)
    trace = np.empty(config.n_warmup)
    restart_at = 0

    for i in range(config.n_warmup):
        result = nuts_transition(
            state, step, inv_metric, target, rng,
            config.max_treedepth, config.max_energy_error,
        )
        state = result.state
        trace[i] = result.accept_stat
        step = dual.update(result.accept_stat)
        update = windows.learn(state.z)
        if update is not None:
            inv_metric = update
            step = find_reasonable_step_size(state, target, inv_metric, rng, step)
            dual.restart(step)
            restart_at = i + 1
            logger.debug(
                "Metric window closed at %d: step %.3g, inverse metric in [%.3g, %.3g]",
                i, step, inv_metric.min(), inv_metric.max(),
            )

    tail = trace[restart_at:] if restart_at < config.n_warmup else trace
    return WarmupResult(
        state=state,
        step_size=dual.final_step,
        inv_metric=inv_metric,
        accept_trace=trace,
        tail_accept=float(np.mean(tail)),
    )


@dataclass
class ChainTelemetry:
    """
    Per-chain sampler statistics; counts cover post-warmup iterations.
    """

    chain: int
    divergences: int
    treedepth_saturations: int
    step_size: float
    inv_metric: np.ndarray = field(repr=False)
    mean_accept_stat: float
    tail_accept: float
    n_leapfrog: int
    tree_depths: np.ndarray = field(repr=False)
    warmup_accept: np.ndarray = field(repr=False)
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "chain": self.chain,
            "divergences": self.divergences,
            "treedepth_saturations": self.treedepth_saturations,
            "step_size": self.step_size,
            "inv_metric": self.inv_metric.tolist(),
            "mean_accept_stat": self.mean_accept_stat,
            "tail_accept": self.tail_accept,
            "n_leapfrog": self.n_leapfrog,
            "seconds": self.seconds,
        }


@dataclass
class Draws:
    """
    Posterior draws of all chains.

    Attributes:
        samples: ``(chains, draws, dim)`` unconstrained draws
        lp: ``(chains, draws)`` log density of every draw
        telemetry: One entry per chain
        pointwise: ``(chains, draws, cells)`` pointwise log-likelihoods when a
            pointwise function was given
    """

    samples: np.ndarray
    lp: np.ndarray
    telemetry: list[ChainTelemetry]
    pointwise: Optional[np.ndarray] = None

    @property
    def n_chains(self) -> int:
        return self.samples.shape[0]

    @property
    def n_draws(self) -> int:
        return self.samples.shape[1]

    @property
    def dim(self) -> int:
        return self.samples.shape[2]

    def flat(self) -> np.ndarray:
        """All draws stacked chain after chain, ``(chains * draws, dim)``."""
        return self.samples.reshape(-1, self.dim)

    def flat_pointwise(self) -> np.ndarray:
        if self.pointwise is None:
            raise ValueError("Draws were sampled without pointwise log-likelihoods")
        return self.pointwise.reshape(-1, self.pointwise.shape[2])

    @property
    def divergences(self) -> int:
        return sum(t.divergences for t in self.telemetry)

    @property
    def treedepth_saturations(self) -> int:
        return sum(t.treedepth_saturations for t in self.telemetry)


def _initial_state(
    target: Target, config: NutsConfig, rng: np.random.Generator
) -> State:
    for attempt in range(1, config.max_init_tries + 1):
        z = rng.uniform(-config.init_radius, config.init_radius, target.dim)
        lp, grad = target.log_density_grad(z)
        if np.isfinite(lp) and np.all(np.isfinite(grad)):
            if attempt > 1:
                logger.debug("Initial point found after %d attempts", attempt)
            return State(z, np.zeros_like(z), lp, grad)
    raise InitializationError(
        f"No initial point with finite log density after {config.max_init_tries} "
        f"attempts in (-{config.init_radius}, {config.init_radius})^{target.dim}"
    )


class _ChainResult(NamedTuple):
    samples: np.ndarray
    lp: np.ndarray
    pointwise: Optional[np.ndarray]
    telemetry: ChainTelemetry


def _run_chain(
    target: Target,
    config: NutsConfig,
    chain: int,
    pointwise: Optional[Callable[[np.ndarray], np.ndarray]],
) -> _ChainResult:
    started = time.perf_counter()
    rng = make_rng(config.seed, NUTS_CHAIN, chain)
    logger.info("Chain %d: starting %d warmup iterations", chain, config.n_warmup)
    warm = adapt_warmup(target, _initial_state(target, config, rng), config, rng)
    logger.info(
        "Chain %d: warmup done, step size %.3g", chain, warm.step_size
    )

    n_keep = config.draws_per_chain
    samples = np.empty((n_keep, target.dim))
    lps = np.empty(n_keep)
    depths = np.empty(config.n_iter, dtype=np.int64)
    accepts = np.empty(config.n_iter)
    divergences = saturations = n_leapfrog = 0
    state = warm.state
    kept = 0
    for i in range(config.n_iter):
        result = nuts_transition(
            state, warm.step_size, warm.inv_metric, target, rng,
            config.max_treedepth, config.max_energy_error,
        )
        state = result.state
        depths[i] = result.tree_depth
        accepts[i] = result.accept_stat
        divergences += result.divergent
        saturations += result.tree_depth >= config.max_treedepth
        n_leapfrog += result.n_leapfrog
        if (i + 1) % config.thin == 0:
            samples[kept] = state.z
            lps[kept] = state.lp
            kept += 1

    point_ll = None
    if pointwise is not None:
        point_ll = np.stack([pointwise(z) for z in samples])

    telemetry = ChainTelemetry(
        chain=chain,
        divergences=int(divergences),
        treedepth_saturations=int(saturations),
        step_size=warm.step_size,
        inv_metric=warm.inv_metric,
        mean_accept_stat=float(np.mean(accepts)),
        tail_accept=warm.tail_accept,
        n_leapfrog=int(n_leapfrog),
        tree_depths=depths,
        warmup_accept=warm.accept_trace,
        seconds=time.perf_counter() - started,
    )
    logger.info(
        "Chain %d: %d draws in %.1fs (%d divergences)",
        chain, n_keep, telemetry.seconds, telemetry.divergences,
    )
    return _ChainResult(samples, lps, point_ll, telemetry)


def nuts_sample(
    target: Target,
    config: NutsConfig,
    pointwise: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> Draws:
    """
    Draw from ``target`` with independent NUTS chains.

    Chain ``c`` uses the stream ``make_rng(config.seed, NUTS_CHAIN, c)``, so
    results do not depend on thread scheduling.

    Args:
        target: Log density and gradient in unconstrained space
        config: Sampler settings
        pointwise: Optional map from a draw to its pointwise log-likelihoods,
            evaluated on every kept draw

    Returns:
        The draws, ``config.n_iter // config.thin`` per chain

    Raises:
        InitializationError: If a chain finds no initial point with finite
            density
    """
    workers = config.n_workers or config.n_chains
    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = [
            executor.submit(_run_chain, target, config, chain, pointwise)
            for chain in range(config.n_chains)
        ]
        results = [future.result() for future in futures]

    draws = Draws(
        samples=np.stack([r.samples for r in results]),
        lp=np.stack([r.lp for r in results]),
        telemetry=[r.telemetry for r in results],
        pointwise=(
            None if pointwise is None else np.stack([r.pointwise for r in results])
        ),
    )
    if draws.divergences:
        logger.warning(
            "%d divergent transitions after warmup in %s",
            draws.divergences, target.name,
        )
    if draws.treedepth_saturations:
        logger.warning(
            "%d transitions hit the maximum tree depth %d",
            draws.treedepth_saturations, config.max_treedepth,
        )
    return draws
