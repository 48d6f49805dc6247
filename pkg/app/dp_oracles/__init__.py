from app.dp_oracles.base import FrequencyOracle, PrivacyParams, VectorSumOracle  # noqa: F401
from app.dp_oracles.exact import ExactOracle  # noqa: F401
from app.dp_oracles.local import LocalFrequencyOracle, LocalVectorOracle  # noqa: F401
from app.dp_oracles.randomness import RunStreams, SharedRandomness  # noqa: F401
from app.dp_oracles.shuffle import (  # noqa: F401
    CellNoise,
    CentralNoiseFrequencyOracle,
    ResidueTable,
    ShuffleConfig,
    ShuffleVectorOracle,
)
