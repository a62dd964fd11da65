"""Numerical laboratory for equilibrium measures of large-degree maps.

Construct a map, sample its equilibrium measure by backward orbits or
exact pullback trees, and probe mixing rates, integrated variance and
the central limit behaviour of observables::

    from eqd import parse_map_spec, make_observable, backward_orbit_sample

    f = parse_map_spec("rational1d: num=[1,0,0] den=[0,0,1]")
    mu = backward_orbit_sample(f, normalize([2, 1]), burn_in=40, count=10_000, seed=7)
"""

from .dynamics import (
    DegreeReport,
    Monomial2D,
    Product2D,
    Rational1D,
    Skew2D,
    check_hypothesis,
    degrees,
    evaluate,
    iterate,
    map_hash,
    parse_map_spec,
)
from .errors import (
    BudgetExceeded,
    ConfigError,
    DegenerateFiber,
    DimMismatch,
    EqdError,
    ExceptionalStart,
    HypothesisViolated,
    IndeterminacyPoint,
    InsufficientSignal,
    InvalidMap,
    InvalidPoint,
    MapParseError,
    NormUnavailable,
    NoRoots,
    ObservableParseError,
    OrbitDropWarning,
    PolarMassWarning,
    PolarValue,
    TreeTooLarge,
)
from .fibers import Fiber, fiber, random_preimage, roots
from .measure import (
    SampleSet,
    backward_orbit_sample,
    fubini_study_set,
    integrate,
    load_sample_set,
    pullback_tree,
    save_sample_set,
)
from .observables import (
    Observable,
    bump,
    chordal_re,
    const,
    cos_arg,
    dist_to,
    lip_of,
    lipschitz_estimate,
    loglog,
    make_observable,
    obs_scale,
    obs_sum,
    poincare_sobolev_check,
    qpsh_log,
    star_norm_p1,
)
from .projective import (
    ProjPoint,
    chordal_distance,
    normalize,
    sample_fubini_study,
    sample_fubini_study_batch,
)
from .stats import (
    CltReport,
    CorrelationSeries,
    DecayFit,
    birkhoff_clt,
    correlation_series,
    decay_fit,
    green_kubo_sigma2,
    ks_test,
    mixing_bound_check,
    stationarity_check,
)
from .transfer import (
    DecompositionTrace,
    GordinSeries,
    apply_pf,
    decompose,
    gordin_series,
    lebesgue_mean,
)

__version__ = "0.1.0"
