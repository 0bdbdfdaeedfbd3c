"""Synthetic data, train/test splitting and the experiment protocols.

Every protocol is a pure function of its config: splits, initialisations and
sampler streams come from seeds derived from ``config.seed`` and the position
of the run in the protocol (setting index, fold, engine), so serial and
threaded execution give identical rows.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .distributions import derive_seed, seeded_rng
from .gibbs import PosteriorEstimate, gibbs_run, icm_run
from .masked import MaskedMatrix, mse
from .nonprobabilistic import run_np
from .nonprobabilistic import DEFAULT_STOP as NP_STOP
from .state import HyperParams, NmfState, predict
from .trace import StopRule, TraceRecord
from .vb import vb_run

ENGINES = ("np", "gibbs", "icm", "vb")
MODELS = ("nmf", "nmtf")

DEFAULT_NSR_LEVELS = (0.0, 0.1, 0.2, 0.5, 1.0)
DEFAULT_FRACTIONS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
ACTIVE_THRESHOLD = 0.01
ARD_FIXED_K = {"nmf": (20, None), "nmtf": (10, 10)}
SPLIT_RETRIES = 100


# --------------------------------------------------------------------------- #
# Synthetic data
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class SyntheticSpec:
    """Factors drawn from Exp(factor_rate); noise either with a fixed variance
    or scaled to a noise-to-signal ratio (std of noise / std of truth)."""

    I: int = 100
    J: int = 80
    K: int = 10
    L: Optional[int] = None
    factor_rate: float = 1.0
    noise_variance: Optional[float] = 1.0
    nsr: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if min(self.I, self.J, self.K) < 1 or (self.L is not None and self.L < 1):
            raise ValueError("dimensions must be positive")
        if not self.factor_rate > 0:
            raise ValueError("factor_rate must be positive")
        if (self.noise_variance is None) == (self.nsr is None):
            raise ValueError("give exactly one of noise_variance and nsr")
        if (self.noise_variance or 0.0) < 0 or (self.nsr or 0.0) < 0:
            raise ValueError("noise level must be nonnegative")

    @classmethod
    def for_model(cls, model: str, **overrides) -> "SyntheticSpec":
        if model == "nmtf":
            overrides = {"K": 5, "L": 5, **overrides}
        return cls(**overrides)


def generate_truth(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    scale = 1.0 / spec.factor_rate
    if spec.L is None:
        U = rng.exponential(scale, (spec.I, spec.K))
        V = rng.exponential(scale, (spec.J, spec.K))
        return U @ V.T
    F = rng.exponential(scale, (spec.I, spec.K))
    S = rng.exponential(scale, (spec.K, spec.L))
    G = rng.exponential(scale, (spec.J, spec.L))
    return F @ S @ G.T


def add_noise(truth: np.ndarray, spec: SyntheticSpec, rng: np.random.Generator):
    if spec.nsr is not None:
        variance = (spec.nsr * float(np.std(truth))) ** 2
    else:
        variance = float(spec.noise_variance)
    if variance == 0:
        return truth.copy(), 0.0
    return truth + rng.normal(0.0, np.sqrt(variance), truth.shape), variance


def generate_synthetic(spec: SyntheticSpec, rng: Optional[np.random.Generator] = None):
    """Returns (fully observed data, noise-free truth, noise variance used)."""
    rng = rng if rng is not None else seeded_rng(spec.seed, "synthetic")
    truth = generate_truth(spec, rng)
    values, variance = add_noise(truth, spec, rng)
    return MaskedMatrix.fully_observed(values), truth, variance


# --------------------------------------------------------------------------- #
# Splits
# --------------------------------------------------------------------------- #

def _covers(train: np.ndarray, observed: np.ndarray) -> bool:
    # Rows and columns without any data cannot be covered and are ignored.
    return bool(np.all(train.any(axis=1) >= observed.any(axis=1))
                and np.all(train.any(axis=0) >= observed.any(axis=0)))


def split_train_test(data: MaskedMatrix, test_fraction: float, rng: np.random.Generator,
                     max_tries: int = SPLIT_RETRIES):
    """Random train/test partition of the observed cells.

    Resamples until every row and column keeps a training cell. If that keeps
    failing (very sparse training sets), one random cell per row and column
    is reserved for training and the test cells are drawn from the rest.
    """
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    cells = np.flatnonzero(data.mask)
    n_test = int(round(test_fraction * cells.size))
    if not 0 < n_test < cells.size:
        raise ValueError(f"test fraction {test_fraction} leaves an empty train or test set")
    for _ in range(max_tries):
        test_cells = rng.choice(cells, size=n_test, replace=False)
        test = np.zeros(data.mask.size, dtype=bool)
        test[test_cells] = True
        test = test.reshape(data.shape)
        train = data.mask & ~test
        if _covers(train, data.mask):
            return data.with_mask(train), data.with_mask(test)
    reserved = np.zeros(data.mask.size, dtype=bool)
    for lines in (data.mask, data.mask.T):
        for r, line in enumerate(lines):
            if not line.any():
                continue
            c = rng.choice(np.flatnonzero(line))
            i, j = (r, c) if lines is data.mask else (c, r)
            reserved[np.ravel_multi_index((i, j), data.shape)] = True
    free = cells[~reserved[cells]]
    if n_test > free.size:
        raise ValueError(f"test fraction {test_fraction} leaves a row or column without training cells")
    test = np.zeros(data.mask.size, dtype=bool)
    test[rng.choice(free, size=n_test, replace=False)] = True
    test = test.reshape(data.shape)
    return data.with_mask(data.mask & ~test), data.with_mask(test)


def k_folds(data: MaskedMatrix, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """k disjoint test masks partitioning the observed cells (sizes differ by at most 1)."""
    cells = np.flatnonzero(data.mask)
    if not 1 <= k <= cells.size:
        raise ValueError(f"cannot make {k} folds from {cells.size} observed cells")
    order = rng.permutation(cells)
    folds = []
    for part in np.array_split(order, k):
        m = np.zeros(data.mask.size, dtype=bool)
        m[part] = True
        folds.append(m.reshape(data.shape))
    return folds


# --------------------------------------------------------------------------- #
# Fitting one engine
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class Budget:
    """Iteration budgets per engine. ``np_tolerance`` is the relative MSE
    change that stops NP early (None runs the full budget)."""

    np_iterations: int = 1000
    np_tolerance: Optional[float] = NP_STOP.tolerance
    gibbs_iterations: int = 1000
    icm_iterations: int = 1000
    burn_in: Optional[int] = None
    thin: int = 2
    vb_iterations: int = 500


@dataclass
class Fit:
    engine: str
    state: object          # point state used for prediction
    trace: TraceRecord
    raw: object = None     # PosteriorEstimate (Gibbs) or VB state

    @property
    def prediction(self) -> np.ndarray:
        if isinstance(self.raw, PosteriorEstimate):
            return self.raw.predict()
        return predict(self.state)

    @property
    def seconds(self) -> float:
        return self.trace.seconds[-1]

    @property
    def iterations(self) -> int:
        return self.trace.n_iterations


def fit_engine(engine: str, model: str, data: MaskedMatrix, hyper: HyperParams,
               budget: Budget = Budget(), seed: int = 0, init: str = "random_draw",
               keep_draws: bool = False) -> Fit:
    """Run one engine from a seeded initialisation."""
    if engine == "np":
        if hyper.ard:
            raise ValueError("the non-probabilistic engine has no prior, so ARD does not apply")
        stop = StopRule(budget.np_iterations, budget.np_tolerance, NP_STOP.window)
        state, trace = run_np(data, hyper, model=model, init=init, stop=stop, seed=seed)
        return Fit(engine, state, trace)
    if engine == "gibbs":
        est, trace = gibbs_run(data, hyper, model=model, stop=StopRule(budget.gibbs_iterations),
                               burn_in=budget.burn_in, thin=budget.thin, init=init, seed=seed,
                               keep_draws=keep_draws)
        return Fit(engine, est.mean_state(), trace, est)
    if engine == "icm":
        state, trace = icm_run(data, hyper, model=model, stop=StopRule(budget.icm_iterations),
                               burn_in=budget.burn_in, thin=budget.thin, init=init, seed=seed)
        return Fit(engine, state, trace)
    if engine == "vb":
        state, trace = vb_run(data, hyper, model=model, stop=StopRule(budget.vb_iterations),
                              init=init, seed=seed, elbo_every=0)
        return Fit(engine, state.point(), trace, state)
    raise ValueError(f"unknown engine {engine!r}")


def factor_contributions(state) -> np.ndarray:
    """Mean contribution of each factor k to the prediction: mean(U_k) mean(V_k),
    or mean(F_k) sum_l S_kl mean(G_l) for tri-factorisation."""
    if isinstance(state, NmfState):
        return state.U.mean(axis=0) * state.V.mean(axis=0)
    return state.F.mean(axis=0) * (state.S @ state.G.mean(axis=0))


def active_factors(state, threshold: float = ACTIVE_THRESHOLD) -> int:
    """Factors carrying more than ``threshold`` of the summed contributions.

    Factors switched off by ARD settle near their prior mean rather than at
    zero, so their share of the prediction, not their raw size, is compared.
    """
    c = factor_contributions(state)
    total = c.sum()
    if total <= 0:
        return 0
    return int(np.sum(c > threshold * total))


# --------------------------------------------------------------------------- #
# Results
# --------------------------------------------------------------------------- #

RESULT_COLUMNS = ("experiment", "model", "engine", "ard", "setting", "fold",
                  "train_mse", "test_mse", "iterations", "chosen_k", "active_factors")
TRACE_COLUMNS = ("model", "engine", "iteration", "train_mse")
TIMING_COLUMNS = ("experiment", "model", "engine", "ard", "setting", "fold", "seconds")


@dataclass
class ResultRow:
    experiment: str
    model: str
    engine: str
    ard: bool
    setting: float
    fold: int
    train_mse: float
    test_mse: Optional[float] = None
    iterations: int = 0
    chosen_k: Optional[int] = None
    active_factors: Optional[int] = None
    seconds: float = 0.0


@dataclass
class ExperimentResult:
    """Per-run rows plus, for the convergence experiment, mean traces.

    ``setting_name`` says what the ``setting`` column holds (nsr, missing
    fraction, K, ...). ``trace_seconds`` is kept apart from ``traces`` since
    wall time is the only non-reproducible output.
    """

    kind: str
    setting_name: str
    rows: list = field(default_factory=list)
    traces: list = field(default_factory=list)         # (model, engine, iteration, mean mse)
    trace_seconds: list = field(default_factory=list)  # (model, engine, iteration, mean seconds)

    def select(self, **criteria) -> list:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in criteria.items())]

    def mean_test_mse(self, **criteria) -> float:
        return float(np.mean([r.test_mse for r in self.select(**criteria)]))

    def mean_train_mse(self, **criteria) -> float:
        return float(np.mean([r.train_mse for r in self.select(**criteria)]))


# --------------------------------------------------------------------------- #
# Configuration
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class ExperimentConfig:
    """Shared settings for all protocols.

    ``K``/``L`` default to the synthetic truth. ``data`` replaces the
    synthetic matrix where the protocol allows it (all but the noise test).
    """

    model: str = "nmf"
    engines: tuple = ENGINES
    ard: bool = False
    K: Optional[int] = None
    L: Optional[int] = None
    hyper: dict = field(default_factory=dict)
    init: str = "random_draw"
    budget: Budget = Budget()
    seed: int = 0
    threads: int = 1
    synthetic: Optional[SyntheticSpec] = None
    data: Optional[MaskedMatrix] = None
    repeats: int = 20
    splits: int = 10
    test_fraction: float = 0.1
    nsr_levels: tuple = DEFAULT_NSR_LEVELS
    fractions: tuple = DEFAULT_FRACTIONS
    folds: int = 10
    inner_folds: int = 10

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}")
        for e in self.engines:
            if e not in ENGINES:
                raise ValueError(f"unknown engine {e!r}")
        if self.ard and "np" in self.engines:
            raise ValueError("ARD is a prior; the non-probabilistic engine cannot use it")
        if self.L is not None and self.model != "nmtf":
            raise ValueError("L only applies to the tri-factorisation model")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")

    @property
    def spec(self) -> SyntheticSpec:
        if self.synthetic is not None:
            return self.synthetic
        return SyntheticSpec.for_model(self.model, seed=self.seed)

    def dims(self) -> tuple:
        K = self.K if self.K is not None else self.spec.K
        if self.model == "nmf":
            return K, None
        L = self.L if self.L is not None else (self.spec.L or K)
        return K, L

    def hyper_for(self, K: int, L: Optional[int] = None, ard: Optional[bool] = None) -> HyperParams:
        return HyperParams(K=K, L=L if self.model == "nmtf" else None,
                           ard=self.ard if ard is None else ard, **self.hyper)

    def dataset(self) -> MaskedMatrix:
        if self.data is not None:
            return self.data
        return generate_synthetic(self.spec)[0]


def _map(fn, items: Sequence, threads: int) -> list:
    # Order-preserving; every item carries its own seeds.
    if threads == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _evaluate(fit: Fit, train: MaskedMatrix, test: Optional[MaskedMatrix]):
    pred = fit.prediction
    return mse(train, pred), (mse(test, pred) if test is not None else None)


# --------------------------------------------------------------------------- #
# Protocols
# --------------------------------------------------------------------------- #

def convergence_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Each engine run ``repeats`` times from different initialisations on the
    same data, always for the full budget; traces are averaged over repeats."""
    data = config.dataset()
    K, L = config.dims()
    hyper = config.hyper_for(K, L)
    budget = replace(config.budget, np_tolerance=None)
    jobs = [(e, r) for e in config.engines for r in range(config.repeats)]

    def run(job):
        engine, rep = job
        seed = derive_seed(config.seed, "convergence", engine, rep)
        return fit_engine(engine, config.model, data, hyper, budget, seed, config.init)

    fits = _map(run, jobs, config.threads)
    result = ExperimentResult("convergence", "repeat")
    for (engine, rep), fit in zip(jobs, fits):
        result.rows.append(ResultRow("convergence", config.model, engine, config.ard, rep, rep,
                                     fit.trace.final_mse, None, fit.iterations,
                                     seconds=fit.seconds))
    for engine in config.engines:
        group = [f for (e, _), f in zip(jobs, fits) if e == engine]
        mse_mean = np.mean([f.trace.train_mse for f in group], axis=0)
        sec_mean = np.mean([f.trace.seconds for f in group], axis=0)
        for it, (m, s) in enumerate(zip(mse_mean, sec_mean)):
            result.traces.append((config.model, engine, it, float(m)))
            result.trace_seconds.append((config.model, engine, it, float(s)))
    return result


def _split_runs(experiment, config, datasets, fraction_of, n_splits):
    """Shared driver for noise/sparsity: per setting, ``n_splits`` random
    splits, every engine on each split."""
    K, L = config.dims()
    hyper = config.hyper_for(K, L)
    jobs = [(si, f) for si in range(len(datasets)) for f in range(n_splits)]

    def run(job):
        si, f = job
        setting, data = datasets[si]
        train, test = split_train_test(data, fraction_of(setting),
                                       seeded_rng(config.seed, experiment, "split", si, f))
        rows = []
        for engine in config.engines:
            seed = derive_seed(config.seed, experiment, engine, si, f)
            fit = fit_engine(engine, config.model, train, hyper, config.budget, seed, config.init)
            tr, te = _evaluate(fit, train, test)
            rows.append(ResultRow(experiment, config.model, engine, config.ard, setting, f,
                                  tr, te, fit.iterations, seconds=fit.seconds))
        return rows

    return [row for rows in _map(run, jobs, config.threads) for row in rows]


def noise_test(config: ExperimentConfig) -> ExperimentResult:
    """Noise at each nsr level added to one synthetic truth; test MSE on a
    held-out ``test_fraction`` of the noisy cells, over ``splits`` splits."""
    spec = config.spec
    truth = generate_truth(spec, seeded_rng(spec.seed, "synthetic"))
    datasets = []
    for si, nsr in enumerate(config.nsr_levels):
        values, _ = add_noise(truth, replace(spec, noise_variance=None, nsr=nsr),
                              seeded_rng(config.seed, "noise", si))
        datasets.append((float(nsr), MaskedMatrix.fully_observed(values)))
    result = ExperimentResult("noise", "nsr")
    result.rows = _split_runs("noise", config, datasets, lambda _: config.test_fraction, config.splits)
    return result


def sparsity_test(config: ExperimentConfig) -> ExperimentResult:
    """For each missing fraction, ``splits`` random splits with that fraction held out."""
    data = config.dataset()
    datasets = [(float(fr), data) for fr in config.fractions]
    result = ExperimentResult("sparsity", "missing_fraction")
    result.rows = _split_runs("sparsity", config, datasets, lambda fr: fr, config.splits)
    return result


def _dims_for(model, k):
    return (k, k) if model == "nmtf" else (k, None)


def _cv_score(config, data, train_mask, folds, engine, k, stream):
    """Mean test MSE of ``engine`` at dimension k over inner folds of the training cells."""
    K, L = _dims_for(config.model, k)
    hyper = config.hyper_for(K, L, ard=False)
    scores = []
    for f, fold in enumerate(folds):
        train = data.with_mask(train_mask & ~fold)
        test = data.with_mask(fold)
        seed = derive_seed(config.seed, *stream, engine, k, f)
        fit = fit_engine(engine, config.model, train, hyper, config.budget, seed, config.init)
        scores.append(mse(test, fit.prediction))
    return float(np.mean(scores))


def nested_cross_validation(config: ExperimentConfig, K_grid: Sequence[int]) -> ExperimentResult:
    """Outer ``folds``-fold CV; inside each outer fold, ``inner_folds``-fold CV
    on the training cells picks K from ``K_grid`` (L = K for tri-factorisation,
    smallest K on ties). ARD runs skip the inner loop and use a fixed large K."""
    K_grid = sorted(set(int(k) for k in K_grid))
    if not K_grid or K_grid[0] < 1:
        raise ValueError("K_grid must contain positive integers")
    data = config.dataset()
    outer = k_folds(data, config.folds, seeded_rng(config.seed, "cv", "outer"))
    jobs = [(f, e) for f in range(config.folds) for e in config.engines]

    def run(job):
        f, engine = job
        train_mask = data.mask & ~outer[f]
        train, test = data.with_mask(train_mask), data.with_mask(outer[f])
        if config.ard:
            K, L = ARD_FIXED_K[config.model]
            chosen = K
        elif len(K_grid) == 1:
            chosen = K_grid[0]
        else:
            inner = k_folds(train, config.inner_folds, seeded_rng(config.seed, "cv", "inner", f))
            scores = [_cv_score(config, data, train_mask, inner, engine, k, ("cv", "inner", f))
                      for k in K_grid]
            chosen = K_grid[int(np.argmin(scores))]
        if not config.ard:
            K, L = _dims_for(config.model, chosen)
        hyper = config.hyper_for(K, L)
        seed = derive_seed(config.seed, "cv", "outer", engine, f)
        fit = fit_engine(engine, config.model, train, hyper, config.budget, seed, config.init)
        tr, te = _evaluate(fit, train, test)
        return ResultRow("cv", config.model, engine, config.ard, chosen, f, tr, te,
                         fit.iterations, chosen_k=chosen, seconds=fit.seconds)

    result = ExperimentResult("cv", "K")
    result.rows = _map(run, jobs, config.threads)
    return result


def model_selection_sweep(config: ExperimentConfig, K_values: Sequence[int],
                          ard_modes: Sequence[bool] = (False, True)) -> ExperimentResult:
    """``folds``-fold CV test MSE for every K (L = K) and ARD setting, with the
    number of active factors for ARD runs."""
    if "np" in config.engines and any(ard_modes):
        raise ValueError("ARD is a prior; the non-probabilistic engine cannot use it")
    data = config.dataset()
    folds = k_folds(data, config.folds, seeded_rng(config.seed, "model-select", "folds"))
    jobs = [(k, ard, e, f) for k in K_values for ard in ard_modes
            for e in config.engines for f in range(config.folds)]

    def run(job):
        k, ard, engine, f = job
        K, L = _dims_for(config.model, int(k))
        hyper = config.hyper_for(K, L, ard=ard)
        train, test = data.with_mask(data.mask & ~folds[f]), data.with_mask(folds[f])
        seed = derive_seed(config.seed, "model-select", engine, int(k), f)
        fit = fit_engine(engine, config.model, train, hyper, config.budget, seed, config.init)
        tr, te = _evaluate(fit, train, test)
        return ResultRow("model-select", config.model, engine, bool(ard), int(k), f, tr, te,
                         fit.iterations, active_factors=active_factors(fit.state) if ard else None,
                         seconds=fit.seconds)

    result = ExperimentResult("model-select", "K")
    result.rows = _map(run, jobs, config.threads)
    return result


EXPERIMENTS = ("convergence", "noise", "sparsity", "cv", "model-select")
