"""Online local-learning engine for spiking neural networks.

Hidden layers of LIF neurons train themselves per timestep from a layerwise
predictive objective: spike patterns are pulled toward the echo of the
previous sample when the class repeats and pushed away when it changes.
Frozen features then feed one of three low-cost readout heads. Ships with
a portable binary spike-raster format (ESPK), a synthetic benchmark
generator, and a train/eval CLI (`echospike --help`).
"""

from .data import (
    Dataset,
    PairingPolicy,
    SpikeRaster,
    bin_events,
    freq_shift_augment,
    load,
    load_preset,
    pair_stream,
    preset_espp_config,
    save,
    synth_generate,
)
from .errors import (
    CheckpointError,
    EchoSpikeError,
    EspkFormatError,
    TrainingDivergedError,
)
from .kernels import BACKEND, available_backends
from .network import (
    EsppNetwork,
    LayerSpec,
    NetworkSpec,
    TrainingSnapshot,
    update_sparsity,
)
from .neuron import EligibilityTrace, LifState, lif_step, surrogate, trace_step
from .readout import (
    FewShotTable,
    GdHead,
    LsqHead,
    evaluate,
    fewshot_build,
    fewshot_predict,
    gd_update,
    load_head,
    lsq_fit,
    save_head,
    train_gd_head,
)
from .rule import (
    EchoState,
    EsppConfig,
    PairLabel,
    UpdateRecord,
    adaptive_threshold,
    espp_loss,
    finish_sample,
    gate,
    input_activity,
    step_record,
    weight_update,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "BACKEND",
    "available_backends",
    # data
    "Dataset", "SpikeRaster", "PairingPolicy", "load", "save", "synth_generate",
    "freq_shift_augment", "pair_stream", "bin_events", "load_preset",
    "preset_espp_config",
    # neuron
    "LifState", "EligibilityTrace", "lif_step", "trace_step", "surrogate",
    # rule
    "PairLabel", "EsppConfig", "EchoState", "UpdateRecord", "input_activity",
    "adaptive_threshold", "espp_loss", "gate", "weight_update", "finish_sample",
    "step_record",
    # network
    "LayerSpec", "NetworkSpec", "EsppNetwork", "TrainingSnapshot", "update_sparsity",
    # readout
    "GdHead", "LsqHead", "FewShotTable", "gd_update", "train_gd_head", "lsq_fit",
    "fewshot_build", "fewshot_predict", "evaluate", "save_head", "load_head",
    # errors
    "EchoSpikeError", "EspkFormatError", "CheckpointError", "TrainingDivergedError",
]
