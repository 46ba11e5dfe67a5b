from enum import Enum
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from errors import ConfigurationError, InputError


class Mode(str, Enum):
    CW = "CW"
    PW = "PW"
    TVD = "TVD"


class BaselineBucket(str, Enum):
    NEGATIVE = "Negative"
    ZERO = "Zero"
    POSITIVE = "Positive"


class Phase(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


class OutputVariant(str, Enum):
    SEPARATE_NETS = "separate_nets"
    SINGLE_HEAD = "single_head"
    MULTIHEAD = "multihead"
    SINGLE_TRAIN_MULTIHEAD_TEST = "single_train_multihead_test"


class ScoreSource(str, Enum):
    PRESOFTMAX = "presoftmax"
    SOFTMAX = "softmax"
    MC_MEAN_PRESOFTMAX = "mc_mean_presoftmax"
    MC_VAR_PRESOFTMAX = "mc_var_presoftmax"
    MC_MEAN_SOFTMAX = "mc_mean_softmax"
    MC_VAR_SOFTMAX = "mc_var_softmax"

    @property
    def is_variance(self) -> bool:
        return self in (ScoreSource.MC_VAR_PRESOFTMAX, ScoreSource.MC_VAR_SOFTMAX)

    @property
    def needs_mc(self) -> bool:
        return self.value.startswith("mc_")


class Decision(str, Enum):
    ACCEPTED = "accepted"
    IGNORED = "ignored"


ANY = "ANY"
SPECIAL_LABELS = ("UNKNOWN", "EXTRA")


# ---------------------------------------------------------------------------
# Recordings and input encoding
# ---------------------------------------------------------------------------

class Recording(BaseModel):
    """One Doppler acquisition: beam-space image plus its acquisition parameters"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    image: np.ndarray
    roi_row: float
    roi_col: float
    baseline: float = 0.5
    mode: Mode
    label: Optional[str] = None
    split: Optional[str] = None
    path: Optional[str] = None

    @property
    def dims(self) -> Tuple[int, int]:
        return int(self.image.shape[0]), int(self.image.shape[1])

    def check(self) -> None:
        """Raise InputError naming the first malformed field"""
        if self.image.ndim != 2:
            raise InputError(f"image must be 2-D, got shape {self.image.shape}", field="image")
        rows, cols = self.dims
        if not 0 <= self.roi_row < rows:
            raise InputError(f"roi_row {self.roi_row} outside [0, {rows})", field="roi_row")
        if not 0 <= self.roi_col < cols:
            raise InputError(f"roi_col {self.roi_col} outside [0, {cols})", field="roi_col")
        if not 0.0 <= self.baseline <= 1.0:
            raise InputError(f"baseline {self.baseline} outside [0, 1]", field="baseline")


class PipelineConfig(BaseModel):
    sigma: float = 10.0
    rescale: int = 256
    crop: int = 224
    image_mean: Optional[float] = 0.3
    heatmap_mean: Optional[float] = 0.0068
    use_heatmap: bool = True
    train_crop: Literal["random", "center"] = "random"
    eval_crop: Literal["random", "center"] = "center"

    @property
    def channels(self) -> int:
        return 2 if self.use_heatmap else 1

    def check(self) -> None:
        if self.sigma <= 0:
            raise ConfigurationError(f"sigma must be > 0, got {self.sigma}", field="sigma")
        if self.crop > self.rescale:
            raise ConfigurationError(
                f"crop size {self.crop} exceeds rescale size {self.rescale}", field="crop"
            )


# ---------------------------------------------------------------------------
# Network description
# ---------------------------------------------------------------------------

class StageSpec(BaseModel):
    blocks: int
    width: int
    downsample: bool = False


class ArchitectureSpec(BaseModel):
    preset: str = "desk"
    in_channels: int = 2
    input_size: int = 56
    stem_kernel: int = 3
    stem_stride: int = 1
    stem_channels: int = 16
    stem_pool: bool = False
    stages: List[StageSpec] = Field(default_factory=list)
    num_network_classes: int = 10
    head_dropout: float = 0.0
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1


# ---------------------------------------------------------------------------
# Heads and mapping
# ---------------------------------------------------------------------------

class HeadSpec(BaseModel):
    name: str
    modes: List[Mode]
    classes: List[str]


class HeadLayout(BaseModel):
    heads: List[HeadSpec]

    @property
    def class_names(self) -> List[str]:
        return [name for head in self.heads for name in head.classes]

    def indices(self, head_name: str) -> List[int]:
        start = 0
        for head in self.heads:
            if head.name == head_name:
                return list(range(start, start + len(head.classes)))
            start += len(head.classes)
        raise ConfigurationError(f"unknown head '{head_name}'", field="head")


class MappingRow(BaseModel):
    network_class: str
    mode: Union[Mode, Literal["ANY"]] = ANY
    baseline: Union[BaselineBucket, Literal["ANY"]] = ANY
    output: str
    hazard: bool = False

    @property
    def specificity(self) -> int:
        return int(self.mode != ANY) + int(self.baseline != ANY)


class MappingTable(BaseModel):
    rows: List[MappingRow]
    outputs: List[str]
    no_classes: List[str] = Field(default_factory=lambda: ["NO_A", "NO_B"])
    no_output: str = "NO"
    pw_only_outputs: List[str] = Field(default_factory=lambda: ["PV"])


class HeadsConfig(BaseModel):
    layout: HeadLayout
    table: MappingTable
    zero_epsilon: float = 0.0


# ---------------------------------------------------------------------------
# Synthetic phantom
# ---------------------------------------------------------------------------

class Ellipse(BaseModel):
    name: str
    center: Tuple[float, float]
    axes: Tuple[float, float]
    angle: float = 0.0
    intensity: float


class BaselineRule(BaseModel):
    kind: Literal["point", "uniform"] = "point"
    value: float = 0.5
    low: float = 0.0
    high: float = 1.0


class ClassTemplate(BaseModel):
    output: str
    anchor: str
    jitter: float = 1.5
    mode: Mode
    baseline: BaselineRule = Field(default_factory=BaselineRule)


class PoseRange(BaseModel):
    translate: float = 0.15
    rotate_deg: float = 20.0
    scale_min: float = 0.85
    scale_max: float = 1.15


class SplitCounts(BaseModel):
    train: int = 2000
    val: int = 220
    test: int = 700
    unknown: int = 60
    extra: int = 30


class PhantomConfig(BaseModel):
    rows: int = 128
    cols: int = 64
    background: float = 0.03
    envelope: Ellipse
    chambers: List[Ellipse]
    walls: List[Ellipse]
    anchors: Dict[str, Tuple[float, float]]
    holdout_anchors: Dict[str, Tuple[float, float]]
    templates: List[ClassTemplate]
    pose: PoseRange = Field(default_factory=PoseRange)
    intensity_jitter: float = 0.1
    speckle_smoothing: float = 1.0
    gain: float = 1.0
    counts: SplitCounts = Field(default_factory=SplitCounts)
    pose_retries: int = 50
    unknown_contrast: float = 0.08
    occlusion_bands: int = 3


class ShiftParams(BaseModel):
    gain: float = 0.0
    pose: float = 0.0
    jitter: float = 0.0


# ---------------------------------------------------------------------------
# Runs and experiments
# ---------------------------------------------------------------------------

class OptimizerConfig(BaseModel):
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    step_size: Optional[int] = None
    gamma: float = 0.1


class DataPaths(BaseModel):
    train: Optional[str] = None
    val: Optional[str] = None
    test: Optional[str] = None
    unknown: Optional[str] = None
    extra: Optional[str] = None


class QuantileGrid(BaseModel):
    stop: float = 0.10
    step: float = 0.005

    def points(self) -> List[float]:
        count = int(round(self.stop / self.step))
        return [round(k * self.step, 10) for k in range(count + 1)]


class McDropoutConfig(BaseModel):
    rate: float = 0.5
    runs: int = 100


class RunConfig(BaseModel):
    seed: Optional[int] = None
    pipeline: PipelineConfig = Field(default_factory=PipelineConfig)
    architecture: str = "desk"
    architecture_overrides: Dict[str, Any] = Field(default_factory=dict)
    variant: OutputVariant = OutputVariant.MULTIHEAD
    heads: str = "heads_default.json"
    phantom: Optional[str] = None
    test_shift: ShiftParams = Field(default_factory=ShiftParams)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    epochs: int = 12
    batch_size: int = 32
    retrain_on_train_val: bool = False
    data_dir: str = "outputs/data"
    data: DataPaths = Field(default_factory=DataPaths)
    artifact: str = "outputs/model.dsca"
    report_dir: str = "outputs/reports"
    quantile_grid: QuantileGrid = Field(default_factory=QuantileGrid)
    quantile: float = 0.0
    score_source: ScoreSource = ScoreSource.PRESOFTMAX
    mc: McDropoutConfig = Field(default_factory=McDropoutConfig)
    workers: int = 4
    chunk_size: int = 64

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigurationError("a seed is mandatory: set 'seed' or pass --seed", field="seed")
        return self.seed


class ExperimentSpec(BaseModel):
    id: str
    phantom: Optional[str] = None


class ExperimentConfig(BaseModel):
    run: str = "run_desk.json"
    experiments: List[ExperimentSpec]
    timing_runs: int = 100
