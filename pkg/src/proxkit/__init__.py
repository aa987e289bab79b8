"""Distance-class estimation between two phones from BLE RSSI and IMU logs.

The package turns raw sensor event files into fixed-schema feature
vectors (RSSI summaries and percentiles, radio-propagation scalars,
per-sensor IMU statistics, polynomial-contrast context encodings),
trains from-scratch tree ensembles per dataset grain, and scores
predictions with the normalized decision cost function.

Typical flow::

    from proxkit import synth, pipeline, config

    doc = config.default_document()
    spec = config.generator_spec(doc, seed=7)
    events, keys = synth.generate(spec)
"""

from . import config, corpus, ensemble, features, pipeline, radio, scoring, synth
from .corpus import (
    DISTANCE_CLASSES,
    STEP_SIZES,
    DeviceContext,
    Event,
    Grain,
    KeyEntry,
    KeyTable,
    Reading,
    SensorKind,
    join,
    load_events,
    load_key,
    parse_event,
    parse_key,
    write_corpus,
    write_event,
    write_key,
)
from .ensemble import (
    ExtraTreesHyperparams,
    GbmHyperparams,
    TreeEnsembleModel,
    fit_extra_trees,
    fit_gbm,
    gini,
    grid_search,
    predict,
    predict_proba,
)
from .errors import DataError, ProxkitError, UsageError
from .features import (
    CategoryVocabulary,
    ContrastMatrix,
    FeatureConfig,
    FeatureVector,
    build_matrix,
    encode_context,
    extract,
    percentile,
    polynomial_contrasts,
    schema_for,
    summarize,
)
from .pipeline import (
    AblationResult,
    ExperimentConfig,
    ExperimentResult,
    permutation_importance,
    run_ablation,
    run_experiment,
    run_importance,
    run_protocol,
)
from .radio import (
    RadioParams,
    SearchSpace,
    fit_params,
    friis_distance,
    friis_received_power,
    linear_approx_distance,
    path_loss_attenuation,
)
from .scoring import (
    STANDARD_CONDITIONS,
    CostWeights,
    EvalCondition,
    NdcfReport,
    evaluate,
    miss_fa,
    ndcf,
)
from .synth import GeneratorSpec, ImuDrift, generate, split_corpus

__version__ = "0.1.0"
